//! Experiment configuration: one JSON document, durations in ticks.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{Hyperparams, OUTPUT};
use crate::error::{Error, Result};
use crate::features::{NormalizationSpec, DEFAULT_DELTA};
use crate::queue::QueueConfig;
use crate::sim::worstcase::{table7_settings, WorstCaseSetting};
use crate::sim::{BaselineParams, ScenarioSpec, SchedulerKind, SuperProducerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
    Worstcase,
    Table5,
}

/// A scenario given task by task, or generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioSource {
    Explicit(ScenarioSpec),
    SuperProducer(SuperProducerSpec),
}

impl ScenarioSource {
    pub fn build(&self, scheduler: SchedulerKind, seed: u64) -> Result<ScenarioSpec> {
        let spec = match self {
            ScenarioSource::Explicit(spec) => ScenarioSpec {
                scheduler,
                seed,
                ..spec.clone()
            },
            ScenarioSource::SuperProducer(sp) => sp.build(scheduler, seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Placement decisions the exploration schedule is spread over, and the
    /// hard stop for training.
    pub max_cycles: u64,
    /// Hard stop in simulated ticks.
    pub max_ticks: u64,
    /// One gradient step every this many decisions.
    pub train_every: u64,
    /// Decisions in the convergence window.
    pub reward_window: usize,
    /// Length of one logged epoch; set it to the stress period.
    pub epoch_ticks: u64,
    /// Consecutive drop-free epochs required, on top of the reward window.
    pub converge_epochs: u64,
    /// Ticks of random placement used to derive normalisation caps.
    pub calibration_ticks: u64,
    /// Bounded transition FIFO of the concurrent trainer.
    pub trainer_fifo: usize,
    /// Apply the delta gate while training.
    pub delta_gate: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            max_cycles: 200_000,
            max_ticks: 2_000_000,
            train_every: 4,
            reward_window: 500,
            epoch_ticks: 2_000,
            converge_epochs: 10,
            calibration_ticks: 4_000,
            trainer_fifo: 256,
            delta_gate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub scenario: ScenarioSource,
    #[serde(default = "all_schedulers")]
    pub schedulers: Vec<SchedulerKind>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn all_schedulers() -> Vec<SchedulerKind> {
    SchedulerKind::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorstCaseConfig {
    /// Nanoseconds per tick used to scale the reference settings.
    pub scale: u64,
    /// Explicit settings; the scaled reference table when absent.
    pub settings: Option<Vec<WorstCaseSetting>>,
}

impl Default for WorstCaseConfig {
    fn default() -> Self {
        WorstCaseConfig {
            scale: 100,
            settings: None,
        }
    }
}

impl WorstCaseConfig {
    pub fn settings(&self) -> Vec<WorstCaseSetting> {
        self.settings.clone().unwrap_or_else(|| table7_settings(self.scale.max(1)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub weights: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

fn default_time_scale() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Nanoseconds represented by one tick. Informational only.
    #[serde(default = "default_time_scale")]
    pub time_scale: f64,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub seed: u64,
    /// Training scenario, also the default evaluation scenario.
    pub scenario: ScenarioSource,
    #[serde(default)]
    pub eval: Option<EvalConfig>,
    pub queue_config: QueueConfig,
    /// Fixed caps; derived from a calibration pass when absent.
    #[serde(default)]
    pub normalization: Option<NormalizationSpec>,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub baselines: BaselineParams,
    #[serde(default)]
    pub worstcase: WorstCaseConfig,
    #[serde(default)]
    pub outputs: Outputs,
}

fn field(name: &str, why: &str) -> Error {
    Error::InvalidConfig(format!("{name} {why}"))
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.time_scale.is_finite() && self.time_scale > 0.0) {
            return Err(field("time_scale", "must be finite and > 0"));
        }
        self.queue_config.validate()?;
        if self.queue_config.num_queues != OUTPUT {
            return Err(field(
                "queue_config.num_queues",
                &format!("must be {OUTPUT} to match the network outputs"),
            ));
        }
        self.hyperparams.validate()?;
        if let Some(n) = &self.normalization {
            n.validate()?;
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(field("delta", "must lie in (0, 1)"));
        }
        let t = &self.training;
        for (name, v) in [
            ("training.max_cycles", t.max_cycles),
            ("training.max_ticks", t.max_ticks),
            ("training.train_every", t.train_every),
            ("training.epoch_ticks", t.epoch_ticks),
            ("training.converge_epochs", t.converge_epochs),
            ("training.calibration_ticks", t.calibration_ticks),
        ] {
            if v == 0 {
                return Err(field(name, "must be > 0"));
            }
        }
        if t.reward_window == 0 {
            return Err(field("training.reward_window", "must be > 0"));
        }
        if t.trainer_fifo == 0 {
            return Err(field("training.trainer_fifo", "must be > 0"));
        }
        if self.baselines.mlfq_levels == 0 {
            return Err(field("baselines.mlfq_levels", "must be > 0"));
        }
        if self.baselines.mlfq_boost_period == 0 {
            return Err(field("baselines.mlfq_boost_period", "must be > 0"));
        }
        self.scenario.build(SchedulerKind::Aegis, self.seed)?;
        if let Some(e) = &self.eval {
            e.scenario.build(SchedulerKind::Aegis, self.seed)?;
            if e.schedulers.is_empty() {
                return Err(field("eval.schedulers", "must name at least one scheduler"));
            }
        }
        for s in self.worstcase.settings() {
            s.validate()?;
        }
        Ok(())
    }

    pub fn eval_source(&self) -> &ScenarioSource {
        self.eval.as_ref().map_or(&self.scenario, |e| &e.scenario)
    }
}
