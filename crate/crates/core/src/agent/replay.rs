use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::features::NUM_FEATURES;
use crate::queue::QueueId;

/// `(S_t, a, r, S_{t+1})` for one task between two consecutive placements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: [f64; NUM_FEATURES],
    pub action: QueueId,
    pub reward: f64,
    pub next_state: [f64; NUM_FEATURES],
}

/// Bounded FIFO of transitions; the oldest is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    buffer: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        ReplayMemory {
            buffer: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.capacity == 0 {
            return;
        }
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.buffer.iter()
    }

    /// Uniform sample of `batch` distinct transitions.
    pub fn sample<'a>(&'a self, batch: usize, rng: &mut impl Rng) -> Vec<&'a Transition> {
        index::sample(rng, self.buffer.len(), batch.min(self.buffer.len()))
            .into_iter()
            .map(|i| &self.buffer[i])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tagged(tag: usize) -> Transition {
        Transition {
            state: [tag as f64; NUM_FEATURES],
            action: QueueId(1),
            reward: 0.0,
            next_state: [0.0; NUM_FEATURES],
        }
    }

    #[test]
    fn sample_is_distinct_and_bounded() {
        let mut mem = ReplayMemory::new(50);
        for i in 0..50 {
            mem.push(tagged(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = mem.sample(20, &mut rng);
        let mut tags: Vec<_> = batch.iter().map(|t| t.state[0] as usize).collect();
        tags.sort_unstable();
        tags.dedup();
        assert_eq!(tags.len(), 20);
    }

    proptest! {
        #[test]
        fn bounded_and_oldest_first(cap in 1usize..40, n in 0usize..200) {
            let mut mem = ReplayMemory::new(cap);
            for i in 0..n {
                mem.push(tagged(i));
                prop_assert!(mem.len() <= cap);
            }
            let kept: Vec<usize> = mem.iter().map(|t| t.state[0] as usize).collect();
            let first = n.saturating_sub(cap);
            prop_assert_eq!(kept, (first..n).collect::<Vec<_>>());
        }
    }
}
