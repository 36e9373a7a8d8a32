//! Deep Q-learning queue-placement agent.

pub mod learner;
pub mod network;
pub mod quant;
pub mod replay;
pub mod reward;
pub mod train;
pub mod weights;

pub use learner::{spawn_trainer, Learner, SnapshotSlot, TrainerHandle, WeightSnapshot};
pub use network::{argmax_queue, select_action, QNetwork, HIDDEN, INPUT, OUTPUT};
pub use quant::{quantize_int4, QuantizedNetwork};
pub use replay::{ReplayMemory, Transition};
pub use reward::{reward_provenance, reward_utilization};
pub use train::{train_step, Hyperparams, Optimizer, OptimizerKind};
pub use weights::WeightFile;

use crate::error::Result;
use crate::queue::QueueId;

/// A network in the form used for placement decisions.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyModel {
    Float(QNetwork),
    Int4(QuantizedNetwork),
}

impl PolicyModel {
    /// Greedy placement for an integer-valued normalised state.
    pub fn greedy(&self, state: &[i32; INPUT]) -> Result<QueueId> {
        match self {
            PolicyModel::Float(net) => Self::greedy_float(net, state),
            PolicyModel::Int4(q) => Ok(argmax_queue(&q.forward(state)?)),
        }
    }

    pub fn greedy_float(net: &QNetwork, state: &[i32; INPUT]) -> Result<QueueId> {
        Ok(argmax_queue(&net.forward(&state.map(|v| v as f64))?))
    }
}
