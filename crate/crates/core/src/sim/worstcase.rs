//! Worst-case finish-time comparison against round robin.
//!
//! Every task here is a tight loop that always uses its full slice, so the
//! suite advances one slice at a time instead of one tick at a time. The
//! schedule is the same as the tick engine's for such tasks.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provenance::ConsumerProfile;
use crate::queue::{finish_time_ratio_bound, QueueConfig, QueueId, QueueSystem, TaskId};

use super::aegis::AegisScheduler;
use super::scenario::{ScenarioSpec, SchedulerKind, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseSetting {
    pub name: String,
    /// Waiting times of queues `2..=N`, in ticks.
    pub waiting_times: Vec<u64>,
    /// Slice length; must exceed the longest waiting time.
    pub slice: u64,
    /// Tasks in the primary queue.
    pub primary_tasks: usize,
    /// Tasks in each non-primary queue above the lowest.
    pub higher_tasks: usize,
    /// Task counts tried in the lowest queue.
    pub lowest_tasks: Vec<usize>,
    /// Work of one lowest-queue task, in slices.
    pub demand_slices: u64,
}

impl WorstCaseSetting {
    pub fn queue_config(&self) -> Result<QueueConfig> {
        let t_inf = *self.waiting_times.last().unwrap_or(&1);
        QueueConfig::new(self.waiting_times.clone(), self.slice, t_inf)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = self.queue_config()?;
        if self.slice <= *cfg.waiting_times.last().expect("validated") {
            return Err(Error::InvalidConfig(format!(
                "worstcase.{}.slice must exceed the longest waiting time",
                self.name
            )));
        }
        if self.demand_slices == 0 || self.lowest_tasks.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "worstcase.{} needs positive demand and lowest-queue task counts",
                self.name
            )));
        }
        Ok(())
    }
}

/// Desk-scale analogues of the six worst-case settings: waiting times are the
/// nanosecond values divided by `scale`, slices just exceed the longest one.
pub fn table7_settings(scale: u64) -> Vec<WorstCaseSetting> {
    let rows: [(&str, &[u64]); 6] = [
        ("E1", &[500_000]),
        ("E2", &[7_000, 500_000]),
        ("E3", &[2_000, 30_000, 500_000]),
        ("E4", &[2_000, 40_000]),
        ("E5", &[30_000, 6_000_000]),
        ("E6", &[80_000, 70_000_000]),
    ];
    rows.iter()
        .map(|(name, ns)| {
            let waiting_times: Vec<u64> = ns.iter().map(|&t| (t / scale).max(1)).collect();
            WorstCaseSetting {
                name: name.to_string(),
                slice: waiting_times.last().expect("non-empty") + 1,
                waiting_times,
                primary_tasks: 10,
                higher_tasks: 10,
                lowest_tasks: vec![2, 10, 50, 100],
                demand_slices: 3,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseRow {
    pub setting: String,
    pub lowest_tasks: usize,
    /// Tick at which the last lowest-queue task finished.
    pub aegis_finish: u64,
    pub rr_finish: u64,
    pub ratio: f64,
    pub bound: f64,
}

impl WorstCaseRow {
    pub fn within_bound(&self) -> bool {
        self.ratio <= self.bound
    }
}

struct Layout {
    /// (task, queue, demand in slices or unbounded)
    tasks: Vec<(TaskId, QueueId, Option<u64>)>,
}

fn layout(setting: &WorstCaseSetting, m: usize) -> Layout {
    let n = setting.waiting_times.len() + 1;
    let mut tasks = Vec::new();
    let mut next = 0u32;
    let mut add = |q: usize, demand: Option<u64>, tasks: &mut Vec<_>| {
        tasks.push((TaskId(next), QueueId(q), demand));
        next += 1;
    };
    for _ in 0..setting.primary_tasks {
        add(1, None, &mut tasks);
    }
    for q in 2..n {
        for _ in 0..setting.higher_tasks {
            add(q, None, &mut tasks);
        }
    }
    for _ in 0..m {
        add(n, Some(setting.demand_slices), &mut tasks);
    }
    Layout { tasks }
}

/// Finish tick of the last lowest-queue task under the multi-queue
/// backbone, one slice per decision.
pub fn aegis_finish(setting: &WorstCaseSetting, m: usize) -> Result<u64> {
    let cfg = setting.queue_config()?;
    let lowest = cfg.lowest();
    let s = cfg.slice;
    let mut qs = QueueSystem::new(cfg)?;
    let lay = layout(setting, m);
    let mut remaining = vec![None; lay.tasks.len()];
    for (t, q, d) in &lay.tasks {
        qs.enqueue(*t, *q)?;
        remaining[t.0 as usize] = *d;
    }
    let mut left = m;
    let mut now = 0u64;
    qs.advance(1);
    loop {
        let Some((q, task)) = qs.dispatch() else {
            // nothing eligible: the CPU idles for a tick
            now += 1;
            qs.advance(1);
            continue;
        };
        now += s;
        let rem = &mut remaining[task.0 as usize];
        match rem {
            Some(r) => {
                *r -= 1;
                if *r == 0 {
                    debug_assert_eq!(q, lowest);
                    left -= 1;
                    if left == 0 {
                        return Ok(now);
                    }
                } else {
                    qs.enqueue(task, q)?;
                }
            }
            None => qs.enqueue(task, q)?,
        }
        qs.advance(s);
    }
}

/// Finish tick of the last lowest-queue task under round robin over the
/// same tasks.
pub fn rr_finish(setting: &WorstCaseSetting, m: usize) -> u64 {
    let lay = layout(setting, m);
    let mut ring: VecDeque<(Option<u64>, bool)> = lay
        .tasks
        .iter()
        .map(|&(_, q, d)| (d, q.0 == setting.waiting_times.len() + 1))
        .collect();
    let mut left = m;
    let mut now = 0;
    while let Some((demand, lowest)) = ring.pop_front() {
        now += setting.slice;
        match demand {
            Some(1) => {
                if lowest {
                    left -= 1;
                    if left == 0 {
                        return now;
                    }
                }
            }
            Some(r) => ring.push_back((Some(r - 1), lowest)),
            None => ring.push_back((None, lowest)),
        }
    }
    now
}

pub fn run_setting(setting: &WorstCaseSetting) -> Result<Vec<WorstCaseRow>> {
    setting.validate()?;
    let bound = finish_time_ratio_bound(&setting.queue_config()?)?;
    let bound = *bound.numer() as f64 / *bound.denom() as f64;
    setting
        .lowest_tasks
        .iter()
        .map(|&m| {
            let a = aegis_finish(setting, m)?;
            let r = rr_finish(setting, m);
            Ok(WorstCaseRow {
                setting: setting.name.clone(),
                lowest_tasks: m,
                aegis_finish: a,
                rr_finish: r,
                ratio: a as f64 / r as f64,
                bound,
            })
        })
        .collect()
}

pub fn worst_case_suite(settings: &[WorstCaseSetting]) -> Result<Vec<WorstCaseRow>> {
    let mut rows = Vec::new();
    for s in settings {
        rows.extend(run_setting(s)?);
    }
    Ok(rows)
}

/// Tick-engine scenario holding `per_queue[i]` saturating tasks in queue
/// `i + 1`. Tasks in the lowest queue get `lowest_demand` ticks of work if
/// set. The consumer never arrives, so no queue gains a blocking task.
pub fn saturated_scenario(
    cfg: &QueueConfig,
    per_queue: &[usize],
    lowest_demand: Option<u64>,
    duration: u64,
) -> Result<(ScenarioSpec, AegisScheduler)> {
    if per_queue.len() != cfg.num_queues {
        return Err(Error::InvalidConfig(format!(
            "need a task count for each of {} queues",
            cfg.num_queues
        )));
    }
    let mut tasks = vec![TaskSpec {
        arrival: u64::MAX,
        ..TaskSpec::consumer(0)
    }];
    let mut id = 1;
    for (slot, &count) in per_queue.iter().enumerate() {
        let q = QueueId(slot + 1);
        for _ in 0..count {
            tasks.push(TaskSpec {
                initial_queue: Some(q),
                cpu_demand: if q == cfg.lowest() { lowest_demand } else { None },
                ..TaskSpec::new(id)
            });
            id += 1;
        }
    }
    let spec = ScenarioSpec {
        tasks,
        cores: 1,
        duration,
        buffer_capacity: 1,
        consumer: ConsumerProfile::new(1)?,
        scheduler: SchedulerKind::Aegis,
        seed: 0,
    };
    Ok((spec, AegisScheduler::fixed(cfg.clone())?))
}
