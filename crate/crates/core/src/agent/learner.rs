//! Training loop state and the concurrent trainer contract.
//!
//! In synchronous mode the simulator owns a [`Learner`] and calls
//! [`Learner::train`] every K dispatch cycles. In concurrent mode the
//! learner lives on its own thread: the simulator pushes transitions into a
//! bounded FIFO and picks up published [`WeightSnapshot`]s from a
//! [`SnapshotSlot`] at dispatch-cycle boundaries.

use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::QNetwork;
use super::replay::{ReplayMemory, Transition};
use super::train::{train_step, Hyperparams, Optimizer};

pub struct Learner {
    pub online: QNetwork,
    pub target: QNetwork,
    pub memory: ReplayMemory,
    pub hp: Hyperparams,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    steps: u64,
    last_loss: Option<f64>,
}

impl Learner {
    pub fn new(hp: Hyperparams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = QNetwork::random(&mut rng);
        let target = online.clone();
        Learner {
            online,
            target,
            memory: ReplayMemory::new(hp.replay_capacity),
            optimizer: Optimizer::new(hp.optimizer),
            hp,
            rng,
            steps: 0,
            last_loss: None,
        }
    }

    pub fn observe(&mut self, t: Transition) {
        self.memory.push(t);
    }

    /// One gradient step, if the replay memory holds a full batch.
    pub fn train(&mut self) -> Option<f64> {
        if self.memory.len() < self.hp.batch {
            return None;
        }
        let loss = train_step(
            &mut self.online,
            &mut self.target,
            &self.memory,
            &self.hp,
            &mut self.optimizer,
            &mut self.rng,
        )
        .expect("memory holds a full batch");
        self.steps += 1;
        self.last_loss = Some(loss);
        Some(loss)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }
}

/// Immutable published weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSnapshot {
    pub version: u64,
    pub net: QNetwork,
}

/// Latest-value slot shared between the trainer and the simulator.
#[derive(Debug)]
pub struct SnapshotSlot {
    latest: Mutex<Arc<WeightSnapshot>>,
}

impl SnapshotSlot {
    pub fn new(initial: WeightSnapshot) -> Self {
        SnapshotSlot {
            latest: Mutex::new(Arc::new(initial)),
        }
    }

    pub fn publish(&self, snapshot: WeightSnapshot) {
        let mut guard = self.latest.lock().expect("snapshot slot poisoned");
        if snapshot.version > guard.version {
            *guard = Arc::new(snapshot);
        }
    }

    pub fn latest(&self) -> Arc<WeightSnapshot> {
        Arc::clone(&self.latest.lock().expect("snapshot slot poisoned"))
    }
}

pub struct TrainerHandle {
    tx: Option<SyncSender<Transition>>,
    slot: Arc<SnapshotSlot>,
    worker: Option<JoinHandle<Learner>>,
    dropped: u64,
}

impl TrainerHandle {
    /// Offers a transition without blocking the simulation loop. Returns
    /// `false` if the FIFO was full and the transition was discarded.
    pub fn offer(&mut self, t: Transition) -> bool {
        let Some(tx) = &self.tx else { return false };
        match tx.try_send(t) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => {
                self.dropped += 1;
                false
            }
        }
    }

    /// Hands a transition to the trainer, waiting while the FIFO is full so
    /// a fast simulation cannot outrun learning. Returns `false` only if the
    /// trainer has gone away.
    pub fn push(&mut self, t: Transition) -> bool {
        let Some(tx) = &self.tx else { return false };
        if tx.send(t).is_err() {
            self.dropped += 1;
            return false;
        }
        true
    }

    pub fn slot(&self) -> Arc<SnapshotSlot> {
        Arc::clone(&self.slot)
    }

    pub fn discarded(&self) -> u64 {
        self.dropped
    }

    /// Closes the FIFO and waits for the trainer to drain it.
    pub fn finish(mut self) -> Learner {
        self.tx.take();
        self.worker
            .take()
            .expect("trainer joined once")
            .join()
            .expect("trainer thread panicked")
    }
}

/// Moves `learner` onto a worker thread fed by a FIFO of `capacity`
/// transitions. The worker trains after every `train_every` transitions and
/// publishes a new snapshot after every step.
pub fn spawn_trainer(learner: Learner, capacity: usize, train_every: usize) -> TrainerHandle {
    let (tx, rx) = mpsc::sync_channel(capacity);
    let slot = Arc::new(SnapshotSlot::new(WeightSnapshot {
        version: 0,
        net: learner.online.clone(),
    }));
    let worker_slot = Arc::clone(&slot);
    let worker = thread::spawn(move || run_trainer(learner, rx, &worker_slot, train_every.max(1)));
    TrainerHandle {
        tx: Some(tx),
        slot,
        worker: Some(worker),
        dropped: 0,
    }
}

fn run_trainer(
    mut learner: Learner,
    rx: Receiver<Transition>,
    slot: &SnapshotSlot,
    train_every: usize,
) -> Learner {
    let mut since = 0;
    for t in rx {
        learner.observe(t);
        since += 1;
        if since >= train_every {
            since = 0;
            if learner.train().is_some() {
                slot.publish(WeightSnapshot {
                    version: learner.steps(),
                    net: learner.online.clone(),
                });
            }
        }
    }
    learner
}
