//! Per-task context, normalisation to network inputs, and the delta gate.

use serde::{Deserialize, Serialize};

use crate::queue::QueueId;

pub const NUM_FEATURES: usize = 11;

/// Feature names in network input order.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "runtime",
    "nvcsw",
    "wait_freq",
    "wake_freq",
    "nr_stop",
    "nr_idle",
    "prio",
    "nr_event",
    "nr_drop",
    "latency",
    "availability",
];

/// Default EMA factor for the averaged features.
pub const DEFAULT_EMA_ALPHA: f64 = 1.0 / 8.0;

/// Default delta-gate threshold (a right shift by two).
pub const DEFAULT_DELTA: f64 = 0.25;

/// Task and provenance context of one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskContext {
    /// Total ticks this task has been on a CPU.
    pub runtime: f64,
    /// Average voluntary context switches per dispatch cycle.
    pub nvcsw: f64,
    /// How often the task blocks waiting on something else.
    pub wait_freq: f64,
    /// How often the task wakes another task.
    pub wake_freq: f64,
    /// Stops during the last slice.
    pub nr_stop: f64,
    /// Idle CPU ticks observed while the task waited for its last dispatch.
    pub nr_idle: f64,
    /// Queue the task is currently assigned to.
    pub prio: f64,
    /// Average events generated per dispatch cycle.
    pub nr_event: f64,
    /// Average events dropped per dispatch cycle.
    pub nr_drop: f64,
    /// Average buffer occupancy seen when producing.
    pub latency: f64,
    /// Free fraction of the event buffer at the end of the last cycle.
    pub availability: f64,
}

impl Default for TaskContext {
    fn default() -> Self {
        TaskContext {
            runtime: 0.0,
            nvcsw: 0.0,
            wait_freq: 0.0,
            wake_freq: 0.0,
            nr_stop: 0.0,
            nr_idle: 0.0,
            prio: QueueId::PRIMARY.0 as f64,
            nr_event: 0.0,
            nr_drop: 0.0,
            latency: 0.0,
            availability: 1.0,
        }
    }
}

impl TaskContext {
    pub fn to_array(&self) -> [f64; NUM_FEATURES] {
        [
            self.runtime,
            self.nvcsw,
            self.wait_freq,
            self.wake_freq,
            self.nr_stop,
            self.nr_idle,
            self.prio,
            self.nr_event,
            self.nr_drop,
            self.latency,
            self.availability,
        ]
    }

    pub fn from_array(v: [f64; NUM_FEATURES]) -> Self {
        TaskContext {
            runtime: v[0],
            nvcsw: v[1],
            wait_freq: v[2],
            wake_freq: v[3],
            nr_stop: v[4],
            nr_idle: v[5],
            prio: v[6],
            nr_event: v[7],
            nr_drop: v[8],
            latency: v[9],
            availability: v[10],
        }
    }
}

/// What the simulator saw during one dispatch cycle of a task.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CycleObservation {
    pub ran_ticks: u64,
    pub voluntary_switches: u64,
    /// The task blocked at the end of the cycle.
    pub waited: bool,
    pub wakes: u64,
    pub stops: u64,
    pub idle_before: u64,
    pub queue: Option<QueueId>,
    pub events: u64,
    pub drops: u64,
    /// Mean buffer occupancy over the ticks in which the task produced.
    pub mean_occupancy: f64,
    pub availability: f64,
}

fn ema(avg: f64, obs: f64, alpha: f64) -> f64 {
    avg + alpha * (obs - avg)
}

/// Folds one cycle into a context. Cumulative fields add, averaged fields
/// move by an EMA with factor `alpha`, instantaneous fields overwrite. The
/// first cycle a task runs seeds the averages with its observation. A
/// cycle in which the task never ran only refreshes `nr_idle` and
/// `availability`.
pub fn update_context(ctx: &TaskContext, obs: &CycleObservation, alpha: f64) -> TaskContext {
    let mut next = *ctx;
    next.nr_idle = obs.idle_before as f64;
    next.availability = obs.availability.clamp(0.0, 1.0);
    if obs.ran_ticks == 0 {
        return next;
    }
    let alpha = if ctx.runtime == 0.0 { 1.0 } else { alpha };
    next.runtime += obs.ran_ticks as f64;
    next.nvcsw = ema(ctx.nvcsw, obs.voluntary_switches as f64, alpha);
    next.wait_freq = ema(ctx.wait_freq, if obs.waited { 1.0 } else { 0.0 }, alpha);
    next.wake_freq = ema(ctx.wake_freq, obs.wakes as f64, alpha);
    next.nr_event = ema(ctx.nr_event, obs.events as f64, alpha);
    next.nr_drop = ema(ctx.nr_drop, obs.drops as f64, alpha);
    next.latency = ema(ctx.latency, obs.mean_occupancy, alpha);
    next.nr_stop = obs.stops as f64;
    if let Some(q) = obs.queue {
        next.prio = q.0 as f64;
    }
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    Uniform,
    Log2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mode: NormMode,
    pub cap: f64,
}

/// Per-feature normalisation to `[0, 128]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub features: Vec<FeatureNorm>,
}

pub const NORM_RANGE: f64 = 128.0;

/// Default mode of every feature, in input order.
pub const DEFAULT_MODES: [NormMode; NUM_FEATURES] = [
    NormMode::Uniform, // runtime
    NormMode::Log2,    // nvcsw
    NormMode::Uniform, // wait_freq
    NormMode::Uniform, // wake_freq
    NormMode::Uniform, // nr_stop
    NormMode::Uniform, // nr_idle
    NormMode::Uniform, // prio
    NormMode::Log2,    // nr_event
    NormMode::Log2,    // nr_drop
    NormMode::Log2,    // latency
    NormMode::Uniform, // availability
];

impl NormalizationSpec {
    pub fn with_caps(caps: [f64; NUM_FEATURES]) -> Self {
        NormalizationSpec {
            features: DEFAULT_MODES
                .iter()
                .zip(caps)
                .map(|(&mode, cap)| FeatureNorm { mode, cap })
                .collect(),
        }
    }

    /// Caps taken from the per-feature maxima of observed contexts. Features
    /// never seen above zero get a cap of 1.
    pub fn calibrate<'a>(contexts: impl IntoIterator<Item = &'a TaskContext>) -> Self {
        let mut caps = [0.0f64; NUM_FEATURES];
        for ctx in contexts {
            for (cap, v) in caps.iter_mut().zip(ctx.to_array()) {
                if v.is_finite() && v > *cap {
                    *cap = v;
                }
            }
        }
        for cap in &mut caps {
            if *cap <= 0.0 {
                *cap = 1.0;
            }
        }
        Self::with_caps(caps)
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.features.len() != NUM_FEATURES {
            return Err(crate::Error::InvalidConfig(format!(
                "normalization.features must hold {NUM_FEATURES} entries, got {}",
                self.features.len()
            )));
        }
        for (i, f) in self.features.iter().enumerate() {
            if !(f.cap.is_finite() && f.cap > 0.0) {
                return Err(crate::Error::InvalidConfig(format!(
                    "normalization.features[{i}] ({}) cap must be finite and > 0",
                    FEATURE_NAMES[i]
                )));
            }
        }
        Ok(())
    }
}

fn normalize_one(x: f64, norm: &FeatureNorm) -> f64 {
    if !x.is_finite() {
        return if x == f64::INFINITY { NORM_RANGE } else { 0.0 };
    }
    let x = x.max(0.0);
    let v = match norm.mode {
        NormMode::Uniform => x * NORM_RANGE / norm.cap,
        NormMode::Log2 => (1.0 + x).log2() * NORM_RANGE / (1.0 + norm.cap).log2(),
    };
    v.clamp(0.0, NORM_RANGE)
}

/// Maps a context onto 11 values in `[0, 128]`.
pub fn normalize(ctx: &TaskContext, spec: &NormalizationSpec) -> [f64; NUM_FEATURES] {
    let raw = ctx.to_array();
    let mut out = [0.0; NUM_FEATURES];
    for i in 0..NUM_FEATURES {
        out[i] = normalize_one(raw[i], &spec.features[i]);
    }
    out
}

/// Rounds a normalised vector onto the integer grid the deployed network reads.
pub fn to_integer_state(v: &[f64; NUM_FEATURES]) -> [i32; NUM_FEATURES] {
    v.map(|x| x.round().clamp(0.0, NORM_RANGE) as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Infer,
    Skip,
}

fn feature_changed(prev: f64, cur: f64, delta: f64) -> bool {
    match (prev == 0.0, cur == 0.0) {
        (true, true) => false,
        (true, false) | (false, true) => true,
        (false, false) => (1.0 - prev / cur).abs() >= delta,
    }
}

/// Skips inference when both `nvcsw` and `nr_event` moved by less than
/// `delta` relative to the current value. With no previous context the
/// network is always consulted.
pub fn delta_gate(prev: Option<&TaskContext>, cur: &TaskContext, delta: f64) -> GateDecision {
    let Some(prev) = prev else {
        return GateDecision::Infer;
    };
    if feature_changed(prev.nvcsw, cur.nvcsw, delta)
        || feature_changed(prev.nr_event, cur.nr_event, delta)
    {
        GateDecision::Infer
    } else {
        GateDecision::Skip
    }
}
