//! Discrete-event CPU scheduling simulator built around a learned,
//! provenance-aware multi-queue scheduler.
//!
//! The crate is organised bottom-up:
//!
//! * [`queue`] - primary/non-primary FIFO queues, hungry-factor selection,
//!   waiting-time construction and the analytic starvation/finish-time bounds.
//! * [`provenance`] - the bounded event buffer shared by producers and the
//!   consumer, with drop accounting.
//! * [`features`] - per-task contexts, normalisation to `[0, 128]`, and the
//!   delta gate that skips inference for unchanged tasks.
//! * [`agent`] - the Q-network, rewards, replay memory, training and INT4
//!   quantisation.
//! * [`sim`] - the tick-accurate engine, baseline schedulers, workload
//!   generators and the worst-case suite.
//! * [`harness`] - experiment configuration and the `train`, `eval`,
//!   `worstcase` and `table5` commands.

pub mod agent;
pub mod error;
pub mod features;
pub mod harness;
pub mod provenance;
pub mod queue;
pub mod sim;

pub use error::{Error, Result};
