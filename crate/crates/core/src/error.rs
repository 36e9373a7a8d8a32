use thiserror::Error;

use crate::queue::{QueueId, TaskId};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("task {0} is already enqueued")]
    DuplicateTask(TaskId),

    #[error("queue {queue} out of range for a {num_queues}-queue system")]
    QueueOutOfRange { queue: QueueId, num_queues: usize },

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("invalid event counts: {dropped} dropped out of {events}")]
    InvalidCounts { events: u64, dropped: u64 },

    #[error("non-finite network input at feature {0}")]
    NonFiniteInput(usize),

    #[error("integer accumulator overflow in layer {layer}")]
    AccumulatorOverflow { layer: usize },

    #[error("replay memory holds {have} transitions, batch needs {need}")]
    InsufficientMemory { have: usize, need: usize },

    #[error("invalid scenario: {0}")]
    InvalidSpec(String),

    #[error("aegis inference requires network weights")]
    MissingWeights,

    #[error("trace mismatch: {0}")]
    TraceMismatch(String),

    #[error("bound violation: {0}")]
    BoundViolation(String),

    #[error("training did not converge: {0}")]
    NonConvergence(String),

    #[error("malformed weight file: {0}")]
    WeightFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
