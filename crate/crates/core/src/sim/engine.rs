//! Tick-accurate simulation loop.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{update_context, CycleObservation, TaskContext, DEFAULT_EMA_ALPHA};
use crate::provenance::EventBuffer;
use crate::queue::{QueueId, TaskId};

use super::policy::{After, CycleReport, GlobalCounters, Scheduler};
use super::scenario::ScenarioSpec;

/// One row of the trace, for one core during one tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub core: usize,
    /// Queue the task was taken from, on the tick it was dispatched.
    pub queue: Option<QueueId>,
    pub task: Option<TaskId>,
    pub dispatched: bool,
    pub events: u64,
    pub dropped: u64,
    pub drained: u64,
    /// Buffer occupancy at the end of the tick.
    pub occupancy: u64,
    pub idle: bool,
    /// The task completed its work on this tick.
    pub finished: bool,
    pub inferences: u64,
    pub skips: u64,
}

/// Run summary. Everything here is a function of the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ticks: u64,
    pub produced: u64,
    pub dropped: u64,
    pub consumed: u64,
    pub loss_ratio: f64,
    pub finish_times: BTreeMap<TaskId, u64>,
    pub idle_ticks: u64,
    pub inference_count: u64,
    pub skip_count: u64,
    pub skip_ratio: f64,
    /// Number of ticks by how many events were dropped in them.
    pub drops_by_tick: BTreeMap<u64, u64>,
}

#[derive(Debug, Default)]
pub struct MetricsBuilder {
    ticks: u64,
    last_tick: Option<u64>,
    tick_drops: u64,
    produced: u64,
    dropped: u64,
    consumed: u64,
    finish_times: BTreeMap<TaskId, u64>,
    idle_ticks: u64,
    inferences: u64,
    skips: u64,
    drops_by_tick: BTreeMap<u64, u64>,
}

impl MetricsBuilder {
    pub fn push(&mut self, r: &TickRecord) {
        if self.last_tick != Some(r.tick) {
            self.close_tick();
            self.last_tick = Some(r.tick);
            self.ticks += 1;
        }
        self.tick_drops += r.dropped;
        self.produced += r.events;
        self.dropped += r.dropped;
        self.consumed += r.drained;
        if r.idle {
            self.idle_ticks += 1;
        }
        if r.finished {
            if let Some(t) = r.task {
                self.finish_times.insert(t, r.tick + 1);
            }
        }
        self.inferences += r.inferences;
        self.skips += r.skips;
    }

    fn close_tick(&mut self) {
        if self.last_tick.is_some() {
            *self.drops_by_tick.entry(self.tick_drops).or_insert(0) += 1;
        }
        self.tick_drops = 0;
    }

    pub fn finish(mut self) -> Metrics {
        self.close_tick();
        let decisions = self.inferences + self.skips;
        Metrics {
            ticks: self.ticks,
            produced: self.produced,
            dropped: self.dropped,
            consumed: self.consumed,
            loss_ratio: if self.produced == 0 {
                0.0
            } else {
                self.dropped as f64 / self.produced as f64
            },
            finish_times: self.finish_times,
            idle_ticks: self.idle_ticks,
            inference_count: self.inferences,
            skip_count: self.skips,
            skip_ratio: if decisions == 0 {
                0.0
            } else {
                self.skips as f64 / decisions as f64
            },
            drops_by_tick: self.drops_by_tick,
        }
    }
}

impl Metrics {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a TickRecord>) -> Self {
        let mut b = MetricsBuilder::default();
        for r in records {
            b.push(r);
        }
        b.finish()
    }
}

/// Skip ratio of the placement gate over each task's decisions after its
/// first `warmup` ones. `None` when no decision is left.
pub fn settled_skip_ratio<'a>(records: impl IntoIterator<Item = &'a TickRecord>, warmup: usize) -> Option<f64> {
    let mut seen: BTreeMap<TaskId, usize> = BTreeMap::new();
    let (mut skips, mut total) = (0u64, 0u64);
    for r in records {
        let Some(task) = r.task else { continue };
        if r.inferences + r.skips == 0 {
            continue;
        }
        let n = seen.entry(task).or_default();
        *n += 1;
        if *n > warmup {
            skips += r.skips;
            total += r.inferences + r.skips;
        }
    }
    (total > 0).then(|| skips as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub scheduler: String,
    pub cores: usize,
    pub records: Vec<TickRecord>,
    pub metrics: Metrics,
    /// Ticks after which the buffer failed its conservation identity.
    pub conservation_violations: u64,
    pub buffer: EventBuffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep per-tick records; the summary is computed either way.
    pub keep_records: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { keep_records: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    NotArrived,
    Queued,
    Running,
    Sleeping { until: u64 },
    Blocked,
    Finished,
}

#[derive(Debug, Clone, Default)]
struct CycleAcc {
    ran: u64,
    events: u64,
    drops: u64,
    occupancy_sum: u64,
    producing_ticks: u64,
    wakes: u64,
    idle_before: u64,
    queue: Option<QueueId>,
}

struct TaskState {
    status: Status,
    remaining: Option<u64>,
    cycles: u64,
    ctx: TaskContext,
    idle_mark: u64,
    acc: CycleAcc,
}

#[derive(Clone, Copy)]
struct Running {
    task: usize,
    quantum_left: Option<u64>,
}

/// A scenario in progress under a policy.
pub struct Simulation<P: Scheduler> {
    spec: ScenarioSpec,
    policy: P,
    options: RunOptions,
    rng: ChaCha8Rng,
    buffer: EventBuffer,
    tasks: Vec<TaskState>,
    index: BTreeMap<TaskId, usize>,
    consumer: usize,
    cores: Vec<Option<Running>>,
    tick: u64,
    idle_total: u64,
    records: Vec<TickRecord>,
    metrics: MetricsBuilder,
    violations: u64,
    wake_consumer_by: Option<usize>,
    /// Task indices by arrival tick, consumed from `next_arrival` on.
    arrivals: Vec<usize>,
    next_arrival: usize,
    sleepers: BinaryHeap<Reverse<(u64, usize)>>,
}

/// Seed stream for task behaviour, kept apart from policy randomness.
const BEHAVIOR_STREAM: u64 = 0x6265_6861_7669_6f72;

impl<P: Scheduler> Simulation<P> {
    pub fn new(spec: ScenarioSpec, policy: P, options: RunOptions) -> Result<Self> {
        spec.validate()?;
        let tasks: Vec<TaskState> = spec
            .tasks
            .iter()
            .map(|t| TaskState {
                status: Status::NotArrived,
                remaining: t.cpu_demand,
                cycles: 0,
                ctx: TaskContext::default(),
                idle_mark: 0,
                acc: CycleAcc::default(),
            })
            .collect();
        let index = spec.tasks.iter().enumerate().map(|(i, t)| (t.id, i)).collect();
        let consumer = spec.tasks.iter().position(|t| t.is_consumer).expect("validated");
        let mut arrivals: Vec<usize> = (0..spec.tasks.len()).collect();
        arrivals.sort_by_key(|&i| (spec.tasks[i].arrival, i));
        Ok(Simulation {
            rng: ChaCha8Rng::seed_from_u64(spec.seed ^ BEHAVIOR_STREAM),
            buffer: EventBuffer::new(spec.buffer_capacity),
            cores: vec![None; spec.cores],
            tasks,
            index,
            consumer,
            spec,
            policy,
            options,
            tick: 0,
            idle_total: 0,
            records: Vec::new(),
            metrics: MetricsBuilder::default(),
            violations: 0,
            wake_consumer_by: None,
            arrivals,
            next_arrival: 0,
            sleepers: BinaryHeap::new(),
        })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn is_done(&self) -> bool {
        self.tick >= self.spec.duration
    }

    pub fn policy(&self) -> &P {
        &self.policy
    }

    pub fn buffer(&self) -> &EventBuffer {
        &self.buffer
    }

    pub fn context(&self, task: TaskId) -> Option<&TaskContext> {
        self.index.get(&task).map(|&i| &self.tasks[i].ctx)
    }

    pub fn contexts(&self) -> impl Iterator<Item = (TaskId, &TaskContext)> {
        self.spec.tasks.iter().zip(&self.tasks).map(|(s, t)| (s.id, &t.ctx))
    }

    fn counters(&self) -> GlobalCounters {
        GlobalCounters {
            produced: self.buffer.produced_total(),
            dropped: self.buffer.dropped_total(),
            idle_ticks: self.idle_total,
        }
    }

    fn make_runnable(&mut self, i: usize, first: bool) -> Result<()> {
        self.tasks[i].status = Status::Queued;
        self.tasks[i].idle_mark = self.idle_total;
        let tick = self.tick;
        if first {
            self.policy.arrive(&self.spec.tasks[i], tick)
        } else {
            self.policy.wake(self.spec.tasks[i].id, tick)
        }
    }

    /// Advances the simulation by one tick.
    pub fn step(&mut self) -> Result<()> {
        let tick = self.tick;
        let mut due: Vec<(usize, bool)> = Vec::new();
        while let Some(&i) = self.arrivals.get(self.next_arrival) {
            if self.spec.tasks[i].arrival > tick {
                break;
            }
            due.push((i, true));
            self.next_arrival += 1;
        }
        while let Some(&Reverse((until, i))) = self.sleepers.peek() {
            if until > tick {
                break;
            }
            self.sleepers.pop();
            due.push((i, false));
        }
        due.sort_unstable();
        for (i, first) in due {
            self.make_runnable(i, first)?;
        }
        if self.tasks[self.consumer].status == Status::Blocked && self.buffer.occupancy() > 0 {
            if let Some(w) = self.wake_consumer_by.take() {
                self.tasks[w].acc.wakes += 1;
            }
            self.make_runnable(self.consumer, false)?;
        }
        self.policy.begin_tick(tick);

        let ncores = self.cores.len();
        let mut rows: Vec<TickRecord> = (0..ncores)
            .map(|core| TickRecord {
                tick,
                core,
                queue: None,
                task: None,
                dispatched: false,
                events: 0,
                dropped: 0,
                drained: 0,
                occupancy: 0,
                idle: false,
                finished: false,
                inferences: 0,
                skips: 0,
            })
            .collect();

        for core in 0..ncores {
            if self.cores[core].is_some() {
                continue;
            }
            let Some(d) = self.policy.pick(core, tick) else { continue };
            let i = *self
                .index
                .get(&d.task)
                .ok_or_else(|| Error::InvalidSpec(format!("policy dispatched unknown task {}", d.task)))?;
            let t = &mut self.tasks[i];
            if t.status != Status::Queued {
                return Err(Error::InvalidSpec(format!(
                    "policy dispatched task {} that is not runnable",
                    d.task
                )));
            }
            t.status = Status::Running;
            t.acc = CycleAcc {
                idle_before: self.idle_total - t.idle_mark,
                queue: d.queue,
                ..CycleAcc::default()
            };
            self.cores[core] = Some(Running {
                task: i,
                quantum_left: d.quantum,
            });
            rows[core].queue = d.queue;
            rows[core].dispatched = true;
        }

        let mut ended: Vec<(usize, usize, After, bool, bool)> = Vec::new();
        for core in 0..ncores {
            let Some(mut run) = self.cores[core] else {
                rows[core].idle = true;
                self.idle_total += 1;
                continue;
            };
            let i = run.task;
            rows[core].task = Some(self.spec.tasks[i].id);
            let spec = &self.spec.tasks[i];
            let t = &mut self.tasks[i];
            if spec.is_consumer {
                rows[core].drained = self.buffer.consume(self.spec.consumer.drain_per_tick);
            } else {
                let n = spec.producer.events_at(tick, t.cycles);
                if n > 0 {
                    let before = self.buffer.occupancy();
                    let accepted = self.buffer.produce(n);
                    rows[core].events = n;
                    rows[core].dropped = n - accepted;
                    t.acc.events += n;
                    t.acc.drops += n - accepted;
                    t.acc.occupancy_sum += before;
                    t.acc.producing_ticks += 1;
                    if before == 0 && accepted > 0 && self.wake_consumer_by.is_none() {
                        self.wake_consumer_by = Some(i);
                    }
                }
            }
            t.acc.ran += 1;
            if let Some(r) = t.remaining.as_mut() {
                *r -= 1;
            }
            if let Some(q) = run.quantum_left.as_mut() {
                *q -= 1;
            }
            let finished = t.remaining == Some(0);
            let exhausted = run.quantum_left == Some(0);
            let outcome = if finished {
                Some((After::Finished, false, exhausted))
            } else if spec.is_consumer && self.buffer.occupancy() == 0 {
                Some((After::Blocked, true, exhausted))
            } else if spec.behavior.yield_prob > 0.0 && self.rng.gen_bool(spec.behavior.yield_prob) {
                let after = if spec.behavior.sleep_ticks > 0 {
                    After::Blocked
                } else {
                    After::Runnable
                };
                Some((after, true, exhausted))
            } else if exhausted {
                Some((After::Runnable, false, true))
            } else {
                None
            };
            match outcome {
                Some((after, voluntary, exhausted)) => {
                    rows[core].finished = after == After::Finished;
                    self.cores[core] = None;
                    ended.push((core, i, after, voluntary, exhausted));
                }
                None => self.cores[core] = Some(run),
            }
        }

        for (core, i, after, voluntary, exhausted) in ended {
            let decision = self.end_cycle(i, after, voluntary, exhausted)?;
            rows[core].inferences = decision.inferred as u64;
            rows[core].skips = decision.skipped as u64;
        }

        if !self.buffer.is_conserved() {
            self.violations += 1;
        }
        let occupancy = self.buffer.occupancy();
        for row in &mut rows {
            row.occupancy = occupancy;
            self.metrics.push(row);
        }
        if self.options.keep_records {
            self.records.extend(rows);
        }
        self.tick += 1;
        Ok(())
    }

    fn end_cycle(
        &mut self,
        i: usize,
        after: After,
        voluntary: bool,
        exhausted: bool,
    ) -> Result<super::policy::CycleDecision> {
        let t = &mut self.tasks[i];
        let acc = std::mem::take(&mut t.acc);
        let obs = CycleObservation {
            ran_ticks: acc.ran,
            voluntary_switches: voluntary as u64,
            waited: after == After::Blocked,
            wakes: acc.wakes,
            stops: exhausted as u64,
            idle_before: acc.idle_before,
            queue: acc.queue,
            events: acc.events,
            drops: acc.drops,
            mean_occupancy: if acc.producing_ticks == 0 {
                0.0
            } else {
                acc.occupancy_sum as f64 / acc.producing_ticks as f64
            },
            availability: self.buffer.availability(),
        };
        let prev = t.ctx;
        let first = t.cycles == 0;
        t.ctx = update_context(&prev, &obs, DEFAULT_EMA_ALPHA);
        t.cycles += 1;
        let tick = self.tick;
        let global = self.counters();
        let t = &mut self.tasks[i];
        t.status = match after {
            After::Runnable => Status::Queued,
            After::Finished => Status::Finished,
            After::Blocked if i == self.consumer => Status::Blocked,
            After::Blocked => Status::Sleeping {
                until: tick + 1 + self.spec.tasks[i].behavior.sleep_ticks,
            },
        };
        if let Status::Sleeping { until } = t.status {
            self.sleepers.push(Reverse((until, i)));
        }
        t.idle_mark = self.idle_total;
        let ctx = t.ctx;
        let policy_after = match t.status {
            Status::Sleeping { .. } => After::Blocked,
            _ => after,
        };
        let report = CycleReport {
            task: self.spec.tasks[i].id,
            tick,
            ran: acc.ran,
            exhausted,
            after: policy_after,
            prev: if first { None } else { Some(&prev) },
            ctx: &ctx,
            global,
        };
        self.policy.end_cycle(&report)
    }

    /// Runs to the end of the scenario.
    pub fn run_to_end(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(())
    }

    pub fn finish(self) -> (SimTrace, P) {
        let trace = SimTrace {
            scheduler: self.policy.name().to_string(),
            cores: self.cores.len(),
            records: self.records,
            metrics: self.metrics.finish(),
            conservation_violations: self.violations,
            buffer: self.buffer,
        };
        (trace, self.policy)
    }
}

/// Runs `spec` to completion under `policy`.
pub fn run<P: Scheduler>(spec: &ScenarioSpec, policy: P) -> Result<(SimTrace, P)> {
    run_with(spec, policy, RunOptions::default())
}

pub fn run_with<P: Scheduler>(spec: &ScenarioSpec, policy: P, options: RunOptions) -> Result<(SimTrace, P)> {
    let mut sim = Simulation::new(spec.clone(), policy, options)?;
    sim.run_to_end()?;
    Ok(sim.finish())
}
