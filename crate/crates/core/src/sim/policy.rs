//! Scheduler interface and the baseline policies.

use std::collections::{BTreeSet, HashMap, VecDeque};

use crate::error::Result;
use crate::features::TaskContext;
use crate::queue::{QueueId, TaskId};

use super::scenario::TaskSpec;

/// A task handed to a core.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dispatch {
    pub task: TaskId,
    /// Queue the task was taken from, for multi-queue policies.
    pub queue: Option<QueueId>,
    /// Ticks the task may run before it is preempted; `None` means it runs
    /// until it yields or finishes.
    pub quantum: Option<u64>,
}

/// State of a task once its dispatch cycle is over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum After {
    Runnable,
    Blocked,
    Finished,
}

/// Global counters at the end of a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GlobalCounters {
    pub produced: u64,
    pub dropped: u64,
    pub idle_ticks: u64,
}

pub struct CycleReport<'a> {
    pub task: TaskId,
    pub tick: u64,
    pub ran: u64,
    /// The full quantum was used.
    pub exhausted: bool,
    pub after: After,
    /// Context before this cycle, `None` on the task's first cycle.
    pub prev: Option<&'a TaskContext>,
    pub ctx: &'a TaskContext,
    pub global: GlobalCounters,
}

/// What a policy did at the end of a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CycleDecision {
    pub inferred: bool,
    pub skipped: bool,
}

pub trait Scheduler {
    fn name(&self) -> &'static str;

    /// A task arrives for the first time.
    fn arrive(&mut self, task: &TaskSpec, tick: u64) -> Result<()>;

    /// A blocked task becomes runnable again.
    fn wake(&mut self, task: TaskId, tick: u64) -> Result<()>;

    /// Called once per tick before any core picks.
    fn begin_tick(&mut self, _tick: u64) {}

    fn pick(&mut self, core: usize, tick: u64) -> Option<Dispatch>;

    /// Called when a dispatch cycle ends. A runnable task must be requeued
    /// by the policy.
    fn end_cycle(&mut self, report: &CycleReport<'_>) -> Result<CycleDecision>;
}

/// Single FIFO, no preemption.
#[derive(Debug, Default)]
pub struct Fifo {
    queue: VecDeque<TaskId>,
}

impl Fifo {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Scheduler for Fifo {
    fn name(&self) -> &'static str {
        "fifo"
    }

    fn arrive(&mut self, task: &TaskSpec, _tick: u64) -> Result<()> {
        self.queue.push_back(task.id);
        Ok(())
    }

    fn wake(&mut self, task: TaskId, _tick: u64) -> Result<()> {
        self.queue.push_back(task);
        Ok(())
    }

    fn pick(&mut self, _core: usize, _tick: u64) -> Option<Dispatch> {
        self.queue.pop_front().map(|task| Dispatch {
            task,
            queue: None,
            quantum: None,
        })
    }

    fn end_cycle(&mut self, report: &CycleReport<'_>) -> Result<CycleDecision> {
        if report.after == After::Runnable {
            self.queue.push_back(report.task);
        }
        Ok(CycleDecision::default())
    }
}

/// Circular order with a fixed slice.
#[derive(Debug)]
pub struct RoundRobin {
    queue: VecDeque<TaskId>,
    slice: u64,
}

impl RoundRobin {
    pub fn new(slice: u64) -> Self {
        RoundRobin {
            queue: VecDeque::new(),
            slice: slice.max(1),
        }
    }
}

impl Scheduler for RoundRobin {
    fn name(&self) -> &'static str {
        "rr"
    }

    fn arrive(&mut self, task: &TaskSpec, _tick: u64) -> Result<()> {
        self.queue.push_back(task.id);
        Ok(())
    }

    fn wake(&mut self, task: TaskId, _tick: u64) -> Result<()> {
        self.queue.push_back(task);
        Ok(())
    }

    fn pick(&mut self, _core: usize, _tick: u64) -> Option<Dispatch> {
        self.queue.pop_front().map(|task| Dispatch {
            task,
            queue: None,
            quantum: Some(self.slice),
        })
    }

    fn end_cycle(&mut self, report: &CycleReport<'_>) -> Result<CycleDecision> {
        if report.after == After::Runnable {
            self.queue.push_back(report.task);
        }
        Ok(CycleDecision::default())
    }
}

/// Classic multilevel feedback queue. Level `l` runs with a quantum of
/// `slice << l`; using a full quantum demotes a task one level, and every
/// `boost_period` ticks all tasks return to the top level.
#[derive(Debug)]
pub struct Mlfq {
    levels: Vec<VecDeque<TaskId>>,
    level_of: HashMap<TaskId, usize>,
    slice: u64,
    boost_period: u64,
}

impl Mlfq {
    pub fn new(num_levels: usize, slice: u64, boost_period: u64) -> Self {
        Mlfq {
            levels: vec![VecDeque::new(); num_levels.max(1)],
            level_of: HashMap::new(),
            slice: slice.max(1),
            boost_period: boost_period.max(1),
        }
    }

    fn push(&mut self, task: TaskId) {
        let level = *self.level_of.entry(task).or_insert(0);
        self.levels[level].push_back(task);
    }
}

impl Scheduler for Mlfq {
    fn name(&self) -> &'static str {
        "mlfq"
    }

    fn arrive(&mut self, task: &TaskSpec, _tick: u64) -> Result<()> {
        self.level_of.insert(task.id, 0);
        self.push(task.id);
        Ok(())
    }

    fn wake(&mut self, task: TaskId, _tick: u64) -> Result<()> {
        self.push(task);
        Ok(())
    }

    fn begin_tick(&mut self, tick: u64) {
        if tick == 0 || !tick.is_multiple_of(self.boost_period) {
            return;
        }
        let (top, rest) = self.levels.split_at_mut(1);
        for level in rest {
            top[0].extend(level.drain(..));
        }
        self.level_of.values_mut().for_each(|l| *l = 0);
    }

    fn pick(&mut self, _core: usize, _tick: u64) -> Option<Dispatch> {
        let (level, task) = self
            .levels
            .iter_mut()
            .enumerate()
            .find_map(|(l, q)| q.pop_front().map(|t| (l, t)))?;
        Some(Dispatch {
            task,
            queue: Some(QueueId(level + 1)),
            quantum: Some(self.slice << level.min(16)),
        })
    }

    fn end_cycle(&mut self, report: &CycleReport<'_>) -> Result<CycleDecision> {
        if report.after == After::Finished {
            self.level_of.remove(&report.task);
            return Ok(CycleDecision::default());
        }
        if report.exhausted {
            let bottom = self.levels.len() - 1;
            let level = self.level_of.entry(report.task).or_insert(0);
            *level = (*level + 1).min(bottom);
        }
        if report.after == After::Runnable {
            self.push(report.task);
        }
        Ok(CycleDecision::default())
    }
}

/// Fixed-point scale of virtual runtime.
const VRUNTIME_ONE: u64 = 1 << 16;

/// Virtual-deadline style fair scheduler: each task accrues virtual
/// runtime at `1 / weight` per tick and the runnable task with the smallest
/// virtual runtime runs next. A task that (re)joins the run queue starts no
/// earlier than the current minimum.
#[derive(Debug)]
pub struct VirtualDeadline {
    runnable: BTreeSet<(u64, TaskId)>,
    vruntime: HashMap<TaskId, u64>,
    weight: HashMap<TaskId, u64>,
    floor: u64,
    slice: u64,
}

impl VirtualDeadline {
    pub fn new(slice: u64) -> Self {
        VirtualDeadline {
            runnable: BTreeSet::new(),
            vruntime: HashMap::new(),
            weight: HashMap::new(),
            floor: 0,
            slice: slice.max(1),
        }
    }

    fn enqueue(&mut self, task: TaskId) {
        let floor = self.floor;
        let v = self.vruntime.entry(task).or_insert(floor);
        *v = (*v).max(floor);
        self.runnable.insert((*v, task));
    }
}

impl Scheduler for VirtualDeadline {
    fn name(&self) -> &'static str {
        "vdeadline"
    }

    fn arrive(&mut self, task: &TaskSpec, _tick: u64) -> Result<()> {
        self.weight.insert(task.id, task.weight.max(1));
        self.enqueue(task.id);
        Ok(())
    }

    fn wake(&mut self, task: TaskId, _tick: u64) -> Result<()> {
        self.enqueue(task);
        Ok(())
    }

    fn pick(&mut self, _core: usize, _tick: u64) -> Option<Dispatch> {
        let (v, task) = self.runnable.pop_first()?;
        self.floor = self.floor.max(v);
        Some(Dispatch {
            task,
            queue: None,
            quantum: Some(self.slice),
        })
    }

    fn end_cycle(&mut self, report: &CycleReport<'_>) -> Result<CycleDecision> {
        let w = self.weight.get(&report.task).copied().unwrap_or(1);
        if let Some(v) = self.vruntime.get_mut(&report.task) {
            *v += report.ran * VRUNTIME_ONE / w;
        }
        match report.after {
            After::Runnable => self.enqueue(report.task),
            After::Blocked => {}
            After::Finished => {
                self.vruntime.remove(&report.task);
                self.weight.remove(&report.task);
            }
        }
        Ok(CycleDecision::default())
    }
}
