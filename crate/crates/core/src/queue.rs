//! Multi-queue backbone.
//!
//! Queue 1 is the primary queue: a plain FIFO that is consumed whenever no
//! other queue qualifies. Queues `2..=N` are non-primary FIFOs, each with a
//! waiting time. A non-primary queue becomes eligible once the time elapsed
//! since it was last consumed reaches its waiting time; among the eligible,
//! non-empty queues the "hungriest" one (largest `elapsed / waiting_time`)
//! is consumed.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact non-negative rational used for hungry factors and bounds.
pub type Rational = Ratio<u64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u32);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One-based queue index. `QueueId(1)` is the primary queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueueId(pub usize);

impl QueueId {
    pub const PRIMARY: QueueId = QueueId(1);

    pub fn is_primary(self) -> bool {
        self.0 == 1
    }

    fn slot(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for QueueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueConfig {
    pub num_queues: usize,
    /// Waiting times of queues `2..=num_queues`, in ticks.
    pub waiting_times: Vec<u64>,
    /// Length of one fixed time slice, in ticks.
    pub slice: u64,
    /// Worst-case single-queue waiting time the exponential ladder is built from.
    pub t_hat_inf: u64,
}

impl QueueConfig {
    /// Builds a validated config from explicit waiting times.
    pub fn new(waiting_times: Vec<u64>, slice: u64, t_hat_inf: u64) -> Result<Self> {
        let config = QueueConfig {
            num_queues: waiting_times.len() + 1,
            waiting_times,
            slice,
            t_hat_inf,
        };
        config.validate()?;
        Ok(config)
    }

    /// Builds a config whose waiting times follow the exponential ladder of
    /// [`compute_waiting_times`].
    pub fn exponential(t_hat_inf: u64, num_queues: usize, slice: u64) -> Result<Self> {
        let waiting_times = compute_waiting_times(t_hat_inf, num_queues)?;
        Self::new(waiting_times, slice, t_hat_inf)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_queues < 2 {
            return Err(Error::InvalidConfig(format!(
                "queue_config.num_queues must be >= 2, got {}",
                self.num_queues
            )));
        }
        if self.waiting_times.len() != self.num_queues - 1 {
            return Err(Error::InvalidConfig(format!(
                "queue_config.waiting_times must hold {} entries (queues 2..={}), got {}",
                self.num_queues - 1,
                self.num_queues,
                self.waiting_times.len()
            )));
        }
        if self.slice == 0 {
            return Err(Error::InvalidConfig("queue_config.slice must be > 0".into()));
        }
        if self.t_hat_inf == 0 {
            return Err(Error::InvalidConfig("queue_config.t_hat_inf must be > 0".into()));
        }
        if let Some(pos) = self.waiting_times.iter().position(|&w| w == 0) {
            return Err(Error::InvalidConfig(format!(
                "queue_config.waiting_times[{pos}] must be > 0"
            )));
        }
        if let Some(pos) = self.waiting_times.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "queue_config.waiting_times must be strictly increasing: entry {} ({}) >= entry {} ({})",
                pos,
                self.waiting_times[pos],
                pos + 1,
                self.waiting_times[pos + 1]
            )));
        }
        Ok(())
    }

    /// Waiting time of a non-primary queue.
    pub fn waiting_time(&self, queue: QueueId) -> Option<u64> {
        if queue.0 < 2 {
            return None;
        }
        self.waiting_times.get(queue.0 - 2).copied()
    }

    pub fn lowest(&self) -> QueueId {
        QueueId(self.num_queues)
    }

    fn shortest_wait(&self) -> u64 {
        self.waiting_times[0]
    }

    fn longest_wait(&self) -> u64 {
        *self.waiting_times.last().expect("validated config has a non-primary queue")
    }
}

/// Exponential waiting-time ladder `t_i = t_inf^((i + 0.5) / N)` for
/// `i = 2..=N`, rounded to the nearest tick with a floor of one tick.
///
/// The result is non-decreasing; it is strictly increasing only when
/// `t_hat_inf` is large enough for the rounded powers to separate.
pub fn compute_waiting_times(t_hat_inf: u64, num_queues: usize) -> Result<Vec<u64>> {
    if t_hat_inf < 1 {
        return Err(Error::InvalidConfig("t_hat_inf must be >= 1".into()));
    }
    if num_queues < 2 {
        return Err(Error::InvalidConfig(format!(
            "num_queues must be >= 2, got {num_queues}"
        )));
    }
    let base = t_hat_inf as f64;
    let n = num_queues as f64;
    Ok((2..=num_queues)
        .map(|i| {
            let t = base.powf((i as f64 + 0.5) / n).round();
            (t as u64).max(1)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HungryFactors {
    pub values: Vec<Rational>,
}

impl HungryFactors {
    pub fn get(&self, queue: QueueId) -> Rational {
        self.values[queue.slot()]
    }
}

/// Queue state: the FIFOs and the ticks elapsed since each was consumed.
#[derive(Debug, Clone)]
pub struct QueueSystem {
    config: QueueConfig,
    queues: Vec<VecDeque<TaskId>>,
    elapsed: Vec<u64>,
    location: HashMap<TaskId, QueueId>,
}

impl QueueSystem {
    pub fn new(config: QueueConfig) -> Result<Self> {
        config.validate()?;
        let n = config.num_queues;
        Ok(QueueSystem {
            config,
            queues: vec![VecDeque::new(); n],
            elapsed: vec![0; n],
            location: HashMap::new(),
        })
    }

    pub fn config(&self) -> &QueueConfig {
        &self.config
    }

    pub fn elapsed(&self) -> &[u64] {
        &self.elapsed
    }

    /// Overrides the elapsed counters, e.g. to start from a CPU that has
    /// been idle for a while.
    pub fn set_elapsed(&mut self, elapsed: &[u64]) -> Result<()> {
        if elapsed.len() != self.config.num_queues {
            return Err(Error::InvalidConfig(format!(
                "expected {} elapsed counters, got {}",
                self.config.num_queues,
                elapsed.len()
            )));
        }
        self.elapsed.copy_from_slice(elapsed);
        Ok(())
    }

    pub fn len(&self, queue: QueueId) -> usize {
        self.queues.get(queue.0.wrapping_sub(1)).map_or(0, VecDeque::len)
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.queues.iter().map(VecDeque::len).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.location.is_empty()
    }

    pub fn location(&self, task: TaskId) -> Option<QueueId> {
        self.location.get(&task).copied()
    }

    pub fn enqueue(&mut self, task: TaskId, queue: QueueId) -> Result<()> {
        if queue.0 < 1 || queue.0 > self.config.num_queues {
            return Err(Error::QueueOutOfRange {
                queue,
                num_queues: self.config.num_queues,
            });
        }
        if self.location.contains_key(&task) {
            return Err(Error::DuplicateTask(task));
        }
        self.location.insert(task, queue);
        self.queues[queue.slot()].push_back(task);
        Ok(())
    }

    pub fn hungry_factors(&self) -> HungryFactors {
        let mut values = Vec::with_capacity(self.config.num_queues);
        values.push(Rational::from_integer(0));
        for (elapsed, &wait) in self.elapsed[1..].iter().zip(&self.config.waiting_times) {
            values.push(Rational::new(*elapsed, wait));
        }
        HungryFactors { values }
    }

    /// The hungriest eligible non-empty non-primary queue, else the primary
    /// queue if it holds a task, else `None`. Ties go to the lower index.
    pub fn select_queue(&self) -> Option<QueueId> {
        let hungry = self.hungry_factors();
        let one = Rational::from_integer(1);
        let mut best: Option<(QueueId, Rational)> = None;
        for slot in 1..self.config.num_queues {
            let h = hungry.values[slot];
            if h < one || self.queues[slot].is_empty() {
                continue;
            }
            if best.is_none_or(|(_, b)| h > b) {
                best = Some((QueueId(slot + 1), h));
            }
        }
        match best {
            Some((queue, _)) => Some(queue),
            None if !self.queues[0].is_empty() => Some(QueueId::PRIMARY),
            None => None,
        }
    }

    /// Advances every elapsed counter by `ticks`.
    pub fn advance(&mut self, ticks: u64) {
        for e in &mut self.elapsed {
            *e += ticks;
        }
    }

    /// Consumes the selected queue: pops its head and resets its counter.
    pub fn dispatch(&mut self) -> Option<(QueueId, TaskId)> {
        let queue = self.select_queue()?;
        let task = self.queues[queue.slot()]
            .pop_front()
            .expect("selected queue is non-empty");
        self.location.remove(&task);
        self.elapsed[queue.slot()] = 0;
        Some((queue, task))
    }

    /// One tick of the backbone: age every queue, then consume.
    pub fn tick_and_dispatch(&mut self) -> Option<(QueueId, TaskId)> {
        self.advance(1);
        self.dispatch()
    }
}

/// Upper bound on the gap between consumptions of `queue` in the
/// single-core worst case: `s * N * t_queue / t_2`.
///
/// Only defined in the regime `s > t_N`, where every non-primary queue is
/// eligible at every decision.
pub fn starvation_bound(config: &QueueConfig, queue: QueueId) -> Result<Rational> {
    config.validate()?;
    let wait = config.waiting_time(queue).ok_or_else(|| {
        Error::PreconditionViolation(format!(
            "starvation bound needs a non-primary queue in 2..={}, got {queue}",
            config.num_queues
        ))
    })?;
    if config.slice <= config.longest_wait() {
        return Err(Error::PreconditionViolation(format!(
            "starvation bound requires slice ({}) > longest waiting time ({})",
            config.slice,
            config.longest_wait()
        )));
    }
    Ok(Rational::new(
        config.slice * config.num_queues as u64 * wait,
        config.shortest_wait(),
    ))
}

/// Upper bound `(t_N / t_2) * N` on the finish-time ratio of a lowest-queue
/// task against round robin.
pub fn finish_time_ratio_bound(config: &QueueConfig) -> Result<Rational> {
    config.validate()?;
    Ok(Rational::new(config.longest_wait(), config.shortest_wait())
        * Rational::from_integer(config.num_queues as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table5_config() -> QueueConfig {
        QueueConfig::new(vec![2, 4, 8], 1, 16).unwrap()
    }

    fn r(n: u64, d: u64) -> Rational {
        Rational::new(n, d)
    }

    #[test]
    fn waiting_times_identity_base() {
        assert_eq!(compute_waiting_times(1, 4).unwrap(), vec![1, 1, 1]);
    }

    #[test]
    fn waiting_times_exact_powers_of_two() {
        assert_eq!(compute_waiting_times(256, 4).unwrap(), vec![32, 128, 512]);
    }

    #[test]
    fn waiting_times_reject_bad_input() {
        assert!(matches!(compute_waiting_times(0, 4), Err(Error::InvalidConfig(_))));
        assert!(matches!(compute_waiting_times(10, 1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn hungry_factors_examples() {
        let mut qs = QueueSystem::new(table5_config()).unwrap();
        qs.set_elapsed(&[8, 8, 8, 8]).unwrap();
        assert_eq!(qs.hungry_factors().values, vec![r(0, 1), r(4, 1), r(2, 1), r(1, 1)]);

        qs.set_elapsed(&[0, 0, 0, 0]).unwrap();
        assert!(qs.hungry_factors().values.iter().all(|h| *h == r(0, 1)));

        qs.set_elapsed(&[5, 10, 9, 10]).unwrap();
        assert_eq!(qs.hungry_factors().values, vec![r(0, 1), r(5, 1), r(9, 4), r(5, 4)]);
    }

    #[test]
    fn select_prefers_hungriest_then_primary() {
        let mut qs = QueueSystem::new(table5_config()).unwrap();
        for q in 1..=4 {
            qs.enqueue(TaskId(q as u32), QueueId(q)).unwrap();
        }
        qs.set_elapsed(&[8, 8, 8, 8]).unwrap();
        assert_eq!(qs.select_queue(), Some(QueueId(2)));

        // tie at h3 = h4 = 1 goes to the lower index
        qs.set_elapsed(&[11, 1, 4, 8]).unwrap();
        assert_eq!(qs.select_queue(), Some(QueueId(3)));

        qs.set_elapsed(&[3, 1, 3, 2]).unwrap();
        assert_eq!(qs.select_queue(), Some(QueueId::PRIMARY));
    }

    #[test]
    fn select_skips_empty_eligible_queue() {
        let mut qs = QueueSystem::new(table5_config()).unwrap();
        qs.enqueue(TaskId(9), QueueId(4)).unwrap();
        qs.set_elapsed(&[0, 100, 100, 8]).unwrap();
        assert_eq!(qs.select_queue(), Some(QueueId(4)));
        qs.set_elapsed(&[0, 100, 100, 7]).unwrap();
        assert_eq!(qs.select_queue(), None);
    }

    #[test]
    fn idle_when_everything_empty() {
        let mut qs = QueueSystem::new(table5_config()).unwrap();
        assert_eq!(qs.tick_and_dispatch(), None);
        assert_eq!(qs.elapsed(), &[1, 1, 1, 1]);
    }

    #[test]
    fn single_eligible_queue_yields_its_head() {
        let mut qs = QueueSystem::new(table5_config()).unwrap();
        qs.enqueue(TaskId(3), QueueId(3)).unwrap();
        qs.set_elapsed(&[0, 0, 3, 0]).unwrap();
        assert_eq!(qs.tick_and_dispatch(), Some((QueueId(3), TaskId(3))));
        assert_eq!(qs.elapsed(), &[1, 1, 0, 1]);
    }

    #[test]
    fn enqueue_errors_and_fifo_order() {
        let mut qs = QueueSystem::new(table5_config()).unwrap();
        qs.enqueue(TaskId(1), QueueId::PRIMARY).unwrap();
        qs.enqueue(TaskId(2), QueueId::PRIMARY).unwrap();
        assert!(matches!(
            qs.enqueue(TaskId(1), QueueId(2)),
            Err(Error::DuplicateTask(TaskId(1)))
        ));
        assert!(matches!(
            qs.enqueue(TaskId(7), QueueId(5)),
            Err(Error::QueueOutOfRange { .. })
        ));
        assert!(matches!(
            qs.enqueue(TaskId(7), QueueId(0)),
            Err(Error::QueueOutOfRange { .. })
        ));
        assert_eq!(qs.dispatch(), Some((QueueId::PRIMARY, TaskId(1))));
        assert_eq!(qs.dispatch(), Some((QueueId::PRIMARY, TaskId(2))));
        assert_eq!(qs.dispatch(), None);
    }

    #[test]
    fn starvation_bound_examples() {
        let cfg = QueueConfig::new(vec![2, 4, 8], 10, 16).unwrap();
        assert_eq!(starvation_bound(&cfg, QueueId(4)).unwrap(), r(160, 1));
        assert_eq!(starvation_bound(&cfg, QueueId(2)).unwrap(), r(40, 1));
        let cfg = QueueConfig::new(vec![2, 4], 9, 16).unwrap();
        assert_eq!(starvation_bound(&cfg, QueueId(3)).unwrap(), r(54, 1));
    }

    #[test]
    fn starvation_bound_refuses_outside_regime() {
        let cfg = QueueConfig::new(vec![2, 4, 8], 8, 16).unwrap();
        assert!(matches!(
            starvation_bound(&cfg, QueueId(4)),
            Err(Error::PreconditionViolation(_))
        ));
        let cfg = QueueConfig::new(vec![2, 4, 8], 10, 16).unwrap();
        assert!(starvation_bound(&cfg, QueueId::PRIMARY).is_err());
    }

    #[test]
    fn finish_time_bound_examples() {
        let cfg = QueueConfig::new(vec![2, 4, 8], 1, 16).unwrap();
        assert_eq!(finish_time_ratio_bound(&cfg).unwrap(), r(16, 1));
        let cfg = QueueConfig::new(vec![2_000, 30_000, 500_000], 1, 500_000).unwrap();
        assert_eq!(finish_time_ratio_bound(&cfg).unwrap(), r(1000, 1));
        assert!(matches!(
            QueueConfig::new(vec![2, 2, 2], 1, 16),
            Err(Error::InvalidConfig(_))
        ));
    }
}
