//! Discrete-event simulation: scenarios, policies, the engine and the
//! worst-case suite.

pub mod aegis;
pub mod engine;
pub mod export;
pub mod policy;
pub mod scenario;
pub mod worstcase;

pub use aegis::{AegisScheduler, Exploration, ModelSource, Placer, PlacementStats};
pub use engine::{run, run_with, settled_skip_ratio, Metrics, RunOptions, SimTrace, Simulation, TickRecord};
pub use policy::{Fifo, Mlfq, RoundRobin, Scheduler, VirtualDeadline};
pub use scenario::{
    make_super_producer, Behavior, ScenarioSpec, SchedulerKind, StressWave, SuperProducerSpec, TaskSpec,
};

use crate::queue::QueueConfig;

/// Tuning of the baseline policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct BaselineParams {
    pub mlfq_levels: usize,
    pub mlfq_boost_period: u64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            mlfq_levels: 3,
            mlfq_boost_period: 100,
        }
    }
}

/// Baseline policy by kind, sharing the slice of `queues`. Returns `None`
/// for the multi-queue scheduler, which needs its own construction.
pub fn baseline(kind: SchedulerKind, queues: &QueueConfig, params: BaselineParams) -> Option<Box<dyn Scheduler>> {
    let slice = queues.slice;
    Some(match kind {
        SchedulerKind::Aegis => return None,
        SchedulerKind::Fifo => Box::new(Fifo::new()),
        SchedulerKind::Rr => Box::new(RoundRobin::new(slice)),
        SchedulerKind::Mlfq => Box::new(Mlfq::new(params.mlfq_levels, slice, params.mlfq_boost_period)),
        SchedulerKind::Vdeadline => Box::new(VirtualDeadline::new(slice)),
    })
}

impl<S: Scheduler + ?Sized> Scheduler for Box<S> {
    fn name(&self) -> &'static str {
        (**self).name()
    }
    fn arrive(&mut self, task: &TaskSpec, tick: u64) -> crate::Result<()> {
        (**self).arrive(task, tick)
    }
    fn wake(&mut self, task: crate::queue::TaskId, tick: u64) -> crate::Result<()> {
        (**self).wake(task, tick)
    }
    fn begin_tick(&mut self, tick: u64) {
        (**self).begin_tick(tick)
    }
    fn pick(&mut self, core: usize, tick: u64) -> Option<policy::Dispatch> {
        (**self).pick(core, tick)
    }
    fn end_cycle(&mut self, report: &policy::CycleReport<'_>) -> crate::Result<policy::CycleDecision> {
        (**self).end_cycle(report)
    }
}
