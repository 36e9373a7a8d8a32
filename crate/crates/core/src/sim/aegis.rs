//! The learned multi-queue scheduler: the queue backbone decides which
//! queue runs next, and at the end of every dispatch cycle the agent decides
//! which queue the task goes back to.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{
    argmax_queue, quantize_int4, reward_provenance, reward_utilization, Hyperparams, Learner, PolicyModel, QuantizedNetwork,
    TrainerHandle, Transition, WeightSnapshot, OUTPUT,
};
use crate::error::{Error, Result};
use crate::features::{delta_gate, normalize, to_integer_state, GateDecision, NormalizationSpec, NUM_FEATURES};
use crate::queue::{QueueConfig, QueueId, QueueSystem, TaskId};

use super::policy::{After, CycleDecision, CycleReport, Dispatch, Scheduler};
use super::scenario::TaskSpec;

/// Where placement decisions come from.
pub enum ModelSource {
    Frozen(PolicyModel),
    /// In-loop training every `train_every` decisions.
    Sync { learner: Box<Learner>, train_every: u64 },
    /// Training on a separate thread; snapshots are adopted at cycle ends.
    Async {
        handle: TrainerHandle,
        current: Arc<WeightSnapshot>,
    },
}

/// Exploration rate as a function of the decision count.
#[derive(Debug, Clone, PartialEq)]
pub struct Exploration {
    pub hyperparams: Hyperparams,
    pub budget: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlacementStats {
    pub decisions: u64,
    pub inferences: u64,
    pub skips: u64,
    pub transitions: u64,
    pub reward_c_sum: f64,
    pub reward_p_sum: f64,
    pub train_steps: u64,
    pub loss_sum: f64,
    /// Most recent provenance rewards, oldest first.
    pub recent_reward_c: VecDeque<f64>,
    pub window: usize,
}

impl PlacementStats {
    fn record_reward(&mut self, rc: f64, rp: f64) {
        self.transitions += 1;
        self.reward_c_sum += rc;
        self.reward_p_sum += rp;
        if self.window > 0 {
            if self.recent_reward_c.len() == self.window {
                self.recent_reward_c.pop_front();
            }
            self.recent_reward_c.push_back(rc);
        }
    }

    /// Mean provenance reward over the sliding window, once it is full.
    pub fn window_mean_reward_c(&self) -> Option<f64> {
        if self.window == 0 || self.recent_reward_c.len() < self.window {
            return None;
        }
        Some(self.recent_reward_c.iter().sum::<f64>() / self.window as f64)
    }
}

struct Pending {
    state: [f64; NUM_FEATURES],
    action: QueueId,
    produced: u64,
    dropped: u64,
    idle: u64,
}

/// Agent side of the scheduler.
pub struct Placer {
    source: ModelSource,
    norm: NormalizationSpec,
    delta: Option<f64>,
    exploration: Option<Exploration>,
    rng: ChaCha8Rng,
    pending: HashMap<TaskId, Pending>,
    stats: PlacementStats,
    /// INT4 form of the training model; placement while learning uses the
    /// same integer inference as deployment.
    deployed: Option<QuantizedNetwork>,
}

impl Placer {
    pub fn new(
        source: ModelSource,
        norm: NormalizationSpec,
        delta: Option<f64>,
        exploration: Option<Exploration>,
        seed: u64,
    ) -> Result<Self> {
        norm.validate()?;
        if let Some(d) = delta {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::InvalidConfig(format!("delta must lie in (0, 1), got {d}")));
            }
        }
        let mut placer = Placer {
            source,
            norm,
            delta,
            exploration,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending: HashMap::new(),
            stats: PlacementStats::default(),
            deployed: None,
        };
        placer.redeploy();
        Ok(placer)
    }

    fn redeploy(&mut self) {
        self.deployed = match &self.source {
            ModelSource::Frozen(_) => None,
            ModelSource::Sync { learner, .. } => Some(quantize_int4(&learner.online)),
            ModelSource::Async { current, .. } => Some(quantize_int4(&current.net)),
        };
    }

    /// Keeps the last `window` provenance rewards for convergence checks.
    pub fn with_reward_window(mut self, window: usize) -> Self {
        self.stats.window = window;
        self
    }

    pub fn stats(&self) -> &PlacementStats {
        &self.stats
    }

    pub fn source(&self) -> &ModelSource {
        &self.source
    }

    pub fn into_source(self) -> ModelSource {
        self.source
    }

    fn epsilon(&self) -> f64 {
        self.exploration
            .as_ref()
            .map_or(0.0, |e| e.hyperparams.epsilon(self.stats.decisions, e.budget))
    }

    fn greedy(&self, state: &[i32; NUM_FEATURES]) -> Result<QueueId> {
        match (&self.source, &self.deployed) {
            (ModelSource::Frozen(model), _) => model.greedy(state),
            (_, Some(q)) => Ok(argmax_queue(&q.forward(state)?)),
            (_, None) => unreachable!("training sources are always deployed"),
        }
    }

    fn emit(&mut self, t: Transition) {
        match &mut self.source {
            ModelSource::Frozen(_) => {}
            ModelSource::Sync { learner, .. } => learner.observe(t),
            ModelSource::Async { handle, .. } => {
                handle.push(t);
            }
        }
    }

    fn after_decision(&mut self) {
        match &mut self.source {
            ModelSource::Frozen(_) => {}
            ModelSource::Sync { learner, train_every } => {
                if self.stats.decisions.is_multiple_of(*train_every) {
                    if let Some(loss) = learner.train() {
                        self.stats.train_steps += 1;
                        self.stats.loss_sum += loss;
                        self.deployed = Some(quantize_int4(&learner.online));
                    }
                }
            }
            ModelSource::Async { handle, current } => {
                let latest = handle.slot().latest();
                if latest.version > current.version {
                    self.deployed = Some(quantize_int4(&latest.net));
                    *current = latest;
                }
            }
        }
    }

    /// Closes the task's previous decision with its reward and picks the
    /// queue for the next one.
    fn place(&mut self, report: &CycleReport<'_>, current: QueueId) -> Result<(QueueId, CycleDecision)> {
        let int_state = to_integer_state(&normalize(report.ctx, &self.norm));
        let state = int_state.map(|v| v as f64);
        let idle_now = report.ctx.nr_idle as u64;

        if let Some(p) = self.pending.remove(&report.task) {
            let events = report.global.produced - p.produced;
            let dropped = report.global.dropped - p.dropped;
            let rc = reward_provenance(events, dropped)?;
            let rp = reward_utilization(p.idle, idle_now);
            self.stats.record_reward(rc, rp);
            self.emit(Transition {
                state: p.state,
                action: p.action,
                reward: rc + rp,
                next_state: state,
            });
        }
        if report.after == After::Finished {
            return Ok((current, CycleDecision::default()));
        }

        let gate = match self.delta {
            Some(d) => delta_gate(report.prev, report.ctx, d),
            None => GateDecision::Infer,
        };
        let mut decision = CycleDecision::default();
        let action = match gate {
            GateDecision::Skip => {
                self.stats.skips += 1;
                decision.skipped = true;
                current
            }
            GateDecision::Infer => {
                self.stats.inferences += 1;
                decision.inferred = true;
                let eps = self.epsilon();
                if eps > 0.0 && self.rng.gen::<f64>() < eps {
                    QueueId(self.rng.gen_range(1..=OUTPUT))
                } else {
                    self.greedy(&int_state)?
                }
            }
        };
        self.pending.insert(
            report.task,
            Pending {
                state,
                action,
                produced: report.global.produced,
                dropped: report.global.dropped,
                idle: idle_now,
            },
        );
        self.stats.decisions += 1;
        self.after_decision();
        Ok((action, decision))
    }
}

pub struct AegisScheduler {
    qs: QueueSystem,
    home: HashMap<TaskId, QueueId>,
    consumer: Option<TaskId>,
    placer: Option<Placer>,
}

impl AegisScheduler {
    /// Backbone only: every task stays in the queue it starts in.
    pub fn fixed(config: QueueConfig) -> Result<Self> {
        Ok(AegisScheduler {
            qs: QueueSystem::new(config)?,
            home: HashMap::new(),
            consumer: None,
            placer: None,
        })
    }

    pub fn learned(config: QueueConfig, placer: Placer) -> Result<Self> {
        if config.num_queues != OUTPUT {
            return Err(Error::InvalidConfig(format!(
                "queue_config.num_queues must be {OUTPUT} for learned placement, got {}",
                config.num_queues
            )));
        }
        let mut s = Self::fixed(config)?;
        s.placer = Some(placer);
        Ok(s)
    }

    /// Presets the elapsed counters before the first tick.
    pub fn with_elapsed(mut self, elapsed: &[u64]) -> Result<Self> {
        self.qs.set_elapsed(elapsed)?;
        Ok(self)
    }

    pub fn queues(&self) -> &QueueSystem {
        &self.qs
    }

    pub fn placer(&self) -> Option<&Placer> {
        self.placer.as_ref()
    }

    pub fn into_placer(self) -> Option<Placer> {
        self.placer
    }

    pub fn home(&self, task: TaskId) -> Option<QueueId> {
        self.home.get(&task).copied()
    }
}

impl Scheduler for AegisScheduler {
    fn name(&self) -> &'static str {
        "aegis"
    }

    fn arrive(&mut self, task: &TaskSpec, _tick: u64) -> Result<()> {
        let queue = if task.is_consumer {
            self.consumer = Some(task.id);
            QueueId::PRIMARY
        } else {
            task.initial_queue.unwrap_or(QueueId::PRIMARY)
        };
        self.home.insert(task.id, queue);
        self.qs.enqueue(task.id, queue)
    }

    fn wake(&mut self, task: TaskId, _tick: u64) -> Result<()> {
        let queue = self.home.get(&task).copied().unwrap_or(QueueId::PRIMARY);
        self.qs.enqueue(task, queue)
    }

    fn begin_tick(&mut self, _tick: u64) {
        self.qs.advance(1);
    }

    fn pick(&mut self, _core: usize, _tick: u64) -> Option<Dispatch> {
        let (queue, task) = self.qs.dispatch()?;
        Some(Dispatch {
            task,
            queue: Some(queue),
            quantum: Some(self.qs.config().slice),
        })
    }

    fn end_cycle(&mut self, report: &CycleReport<'_>) -> Result<CycleDecision> {
        let current = self.home.get(&report.task).copied().unwrap_or(QueueId::PRIMARY);
        let (queue, decision) = match &mut self.placer {
            Some(placer) if Some(report.task) != self.consumer => placer.place(report, current)?,
            _ => (current, CycleDecision::default()),
        };
        match report.after {
            After::Finished => {
                self.home.remove(&report.task);
            }
            After::Blocked => {
                self.home.insert(report.task, queue);
            }
            After::Runnable => {
                self.home.insert(report.task, queue);
                self.qs.enqueue(report.task, queue)?;
            }
        }
        Ok(decision)
    }
}
