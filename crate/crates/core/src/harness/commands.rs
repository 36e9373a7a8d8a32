use std::path::{Path, PathBuf};

use log::{info, warn};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::agent::{quantize_int4, spawn_trainer, Hyperparams, Learner, PolicyModel, QNetwork, WeightFile};
use crate::error::{Error, Result};
use crate::features::{NormalizationSpec, TaskContext, NUM_FEATURES};
use crate::queue::{QueueConfig, QueueId, QueueSystem, TaskId};
use crate::sim::export::save_trace;
use crate::sim::worstcase::{worst_case_suite, WorstCaseRow};
use crate::sim::{
    baseline, run_with, AegisScheduler, BaselineParams, Exploration, Metrics, ModelSource, Placer, RunOptions,
    ScenarioSpec, SchedulerKind, SimTrace, Simulation,
};

use super::config::{ExperimentConfig, Mode};

const LEARNER_STREAM: u64 = 0x6c65_6172_6e65_72;
const PLACER_STREAM: u64 = 0x706c_6163_6572;

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scheduler: Option<SchedulerKind>,
    pub seed: Option<u64>,
    pub weights: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub no_delta_gate: bool,
    pub sync_train: bool,
}

impl Overrides {
    fn seed(&self, cfg: &ExperimentConfig) -> u64 {
        self.seed.unwrap_or(cfg.seed)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.outputs.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    fn weights(&self, cfg: &ExperimentConfig) -> Option<PathBuf> {
        self.weights.clone().or_else(|| cfg.outputs.weights.clone())
    }
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::BoundViolation(_) | Error::TraceMismatch(_) => 3,
        Error::NonConvergence(_) => 4,
        _ => 2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u64,
    pub end_tick: u64,
    pub decisions: u64,
    pub epsilon: f64,
    pub train_steps: u64,
    /// Mean batch loss over the epoch's steps; absent with the concurrent trainer.
    pub mean_loss: Option<f64>,
    pub mean_reward_c: f64,
    pub mean_reward_p: f64,
    pub produced: u64,
    pub dropped: u64,
    pub drop_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub converged: bool,
    pub ticks: u64,
    pub decisions: u64,
    pub train_steps: u64,
    pub synchronous: bool,
    pub normalization: NormalizationSpec,
    pub epochs: Vec<EpochLog>,
}

/// Trained weights plus everything needed to reproduce them.
pub struct TrainOutcome {
    pub report: TrainReport,
    pub weights: WeightFile,
    pub online: QNetwork,
    pub learner: Learner,
}

/// Caps from the per-feature maxima of every context seen while tasks are
/// placed uniformly at random.
pub fn calibrate(spec: &ScenarioSpec, queues: &QueueConfig, ticks: u64, seed: u64) -> Result<NormalizationSpec> {
    let hp = Hyperparams {
        epsilon_start: 1.0,
        epsilon_end: 1.0,
        ..Hyperparams::default()
    };
    let placer = Placer::new(
        ModelSource::Frozen(PolicyModel::Float(QNetwork::zeros())),
        NormalizationSpec::with_caps([1.0; NUM_FEATURES]),
        None,
        Some(Exploration {
            hyperparams: hp,
            budget: 1,
        }),
        seed ^ PLACER_STREAM,
    )?;
    let spec = ScenarioSpec {
        duration: ticks,
        ..spec.clone()
    };
    let policy = AegisScheduler::learned(queues.clone(), placer)?;
    let mut sim = Simulation::new(spec, policy, RunOptions { keep_records: false })?;
    let mut caps = [0.0f64; NUM_FEATURES];
    while !sim.is_done() {
        sim.step()?;
        for (_, ctx) in sim.contexts() {
            for (cap, v) in caps.iter_mut().zip(ctx.to_array()) {
                if v.is_finite() && v > *cap {
                    *cap = v;
                }
            }
        }
    }
    Ok(NormalizationSpec::calibrate(std::iter::once(&TaskContext::from_array(caps))))
}

fn learned_placer(sim: &Simulation<AegisScheduler>) -> &Placer {
    sim.policy().placer().expect("learned scheduler")
}

struct EpochMark {
    decisions: u64,
    steps: u64,
    loss_sum: f64,
    transitions: u64,
    rc: f64,
    rp: f64,
    produced: u64,
    dropped: u64,
}

impl EpochMark {
    fn take<P: crate::sim::Scheduler>(sim: &Simulation<P>, placer: &Placer) -> Self {
        let s = placer.stats();
        EpochMark {
            decisions: s.decisions,
            steps: s.train_steps,
            loss_sum: s.loss_sum,
            transitions: s.transitions,
            rc: s.reward_c_sum,
            rp: s.reward_p_sum,
            produced: sim.buffer().produced_total(),
            dropped: sim.buffer().dropped_total(),
        }
    }
}

/// Trains placement on the configured scenario until the provenance reward
/// settles at zero or the budget runs out.
pub fn train(cfg: &ExperimentConfig, seed: u64, synchronous: bool) -> Result<TrainOutcome> {
    let t = &cfg.training;
    let base = cfg.scenario.build(SchedulerKind::Aegis, seed)?;
    let norm = match &cfg.normalization {
        Some(n) => n.clone(),
        None => calibrate(&base, &cfg.queue_config, t.calibration_ticks, seed)?,
    };
    let learner = Learner::new(cfg.hyperparams.clone(), seed ^ LEARNER_STREAM);
    let source = if synchronous {
        ModelSource::Sync {
            learner: Box::new(learner),
            train_every: t.train_every,
        }
    } else {
        let handle = spawn_trainer(learner, t.trainer_fifo, t.train_every as usize);
        let current = handle.slot().latest();
        ModelSource::Async { handle, current }
    };
    let placer = Placer::new(
        source,
        norm.clone(),
        t.delta_gate.then_some(cfg.delta),
        Some(Exploration {
            hyperparams: cfg.hyperparams.clone(),
            budget: t.max_cycles,
        }),
        seed ^ PLACER_STREAM,
    )?
    .with_reward_window(t.reward_window);
    let spec = ScenarioSpec {
        duration: t.max_ticks,
        ..base
    };
    let policy = AegisScheduler::learned(cfg.queue_config.clone(), placer)?;
    let mut sim = Simulation::new(spec, policy, RunOptions { keep_records: false })?;

    let anneal_end = (cfg.hyperparams.epsilon_anneal_fraction * t.max_cycles as f64).ceil() as u64;
    let mut epochs = Vec::new();
    let mut converged = false;
    let mut clean_epochs = 0u64;
    let mut mark = EpochMark::take(&sim, learned_placer(&sim));
    loop {
        sim.step()?;
        let placer = learned_placer(&sim);
        let decisions = placer.stats().decisions;
        let epoch_end = sim.tick() % t.epoch_ticks == 0;
        let out_of_budget = decisions >= t.max_cycles || sim.is_done();
        if !epoch_end && !out_of_budget {
            continue;
        }
        let now = EpochMark::take(&sim, placer);
        let n = (now.transitions - mark.transitions).max(1) as f64;
        let steps = now.steps - mark.steps;
        let produced = now.produced - mark.produced;
        let dropped = now.dropped - mark.dropped;
        let log = EpochLog {
            epoch: epochs.len() as u64,
            end_tick: sim.tick(),
            decisions: now.decisions - mark.decisions,
            epsilon: cfg.hyperparams.epsilon(decisions, t.max_cycles),
            train_steps: steps,
            mean_loss: (steps > 0).then(|| (now.loss_sum - mark.loss_sum) / steps as f64),
            mean_reward_c: (now.rc - mark.rc) / n,
            mean_reward_p: (now.rp - mark.rp) / n,
            produced,
            dropped,
            drop_ratio: if produced == 0 { 0.0 } else { dropped as f64 / produced as f64 },
        };
        info!(
            "epoch {} tick {} eps {:.3} loss {:?} r_c {:.5} r_p {:.4} drops {}/{}",
            log.epoch, log.end_tick, log.epsilon, log.mean_loss, log.mean_reward_c, log.mean_reward_p, dropped, produced
        );
        clean_epochs = if produced > 0 && dropped == 0 { clean_epochs + 1 } else { 0 };
        let settled = decisions >= anneal_end
            && placer.stats().window_mean_reward_c() == Some(0.0)
            && clean_epochs >= t.converge_epochs;
        epochs.push(log);
        mark = now;
        if settled {
            converged = true;
            break;
        }
        if out_of_budget {
            break;
        }
    }

    let ticks = sim.tick();
    let (_, policy) = sim.finish();
    let placer = policy.into_placer().expect("learned");
    let stats = placer.stats().clone();
    let learner = match placer.into_source() {
        ModelSource::Sync { learner, .. } => *learner,
        ModelSource::Async { handle, .. } => handle.finish(),
        ModelSource::Frozen(_) => unreachable!("training source"),
    };
    let online = learner.online.clone();
    let quantized = quantize_int4(&online);
    let weights = WeightFile::new(learner.steps().max(1), Some(&online), Some(&quantized), norm.clone());
    let report = TrainReport {
        converged,
        ticks,
        decisions: stats.decisions,
        train_steps: learner.steps(),
        synchronous,
        normalization: norm,
        epochs,
    };
    Ok(TrainOutcome {
        report,
        weights,
        online,
        learner,
    })
}

pub fn cmd_train(cfg: &ExperimentConfig, ov: &Overrides) -> Result<TrainReport> {
    let seed = ov.seed(cfg);
    let out = ov.out_dir(cfg);
    std::fs::create_dir_all(&out)?;
    let outcome = train(cfg, seed, ov.sync_train)?;
    let weights_path = ov.weights(cfg).unwrap_or_else(|| out.join("weights.json"));
    outcome.weights.save(&weights_path)?;
    std::fs::write(
        out.join("train_log.json"),
        serde_json::to_string_pretty(&outcome.report)? + "\n",
    )?;
    let r = outcome.report;
    if !r.converged {
        warn!("partial weights written to {}", weights_path.display());
        return Err(Error::NonConvergence(format!(
            "provenance reward did not settle at zero within {} decisions / {} ticks",
            r.decisions, r.ticks
        )));
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub scheduler: SchedulerKind,
    pub conservation_violations: u64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub delta_gate: bool,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn row(&self, kind: SchedulerKind) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.scheduler == kind)
    }
}

/// Frozen deployment model from a weight file: the INT4 form, quantising
/// the float weights if that is all the file holds.
pub fn deployment_model(weights: &WeightFile) -> Result<PolicyModel> {
    if let Some(q) = weights.quantized()? {
        return Ok(PolicyModel::Int4(q));
    }
    let net = weights.float_weights.as_ref().ok_or(Error::MissingWeights)?;
    Ok(PolicyModel::Int4(quantize_int4(net)))
}

/// Everything one evaluation run needs besides the scenario.
pub struct EvalSetup<'a> {
    pub queues: &'a QueueConfig,
    pub baselines: BaselineParams,
    pub weights: Option<&'a WeightFile>,
    pub delta: Option<f64>,
    pub seed: u64,
}

pub fn run_scheduler(spec: &ScenarioSpec, kind: SchedulerKind, setup: &EvalSetup<'_>) -> Result<SimTrace> {
    let spec = ScenarioSpec {
        scheduler: kind,
        ..spec.clone()
    };
    let options = RunOptions { keep_records: true };
    if kind == SchedulerKind::Aegis {
        let weights = setup.weights.ok_or(Error::MissingWeights)?;
        let placer = Placer::new(
            ModelSource::Frozen(deployment_model(weights)?),
            weights.normalization_spec.clone(),
            setup.delta,
            None,
            setup.seed ^ PLACER_STREAM,
        )?;
        let policy = AegisScheduler::learned(setup.queues.clone(), placer)?;
        return Ok(run_with(&spec, policy, options)?.0);
    }
    let policy = baseline(kind, setup.queues, setup.baselines).expect("baseline kind");
    Ok(run_with(&spec, policy, options)?.0)
}

pub fn cmd_eval(cfg: &ExperimentConfig, ov: &Overrides) -> Result<EvalReport> {
    let seed = ov
        .seed
        .or_else(|| cfg.eval.as_ref().and_then(|e| e.seed))
        .unwrap_or(cfg.seed);
    let kinds = match ov.scheduler {
        Some(k) => vec![k],
        None => cfg
            .eval
            .as_ref()
            .map_or_else(|| SchedulerKind::ALL.to_vec(), |e| e.schedulers.clone()),
    };
    let default_weights = ov.out_dir(cfg).join("weights.json");
    let weights_path = ov
        .weights(cfg)
        .or_else(|| default_weights.exists().then_some(default_weights));
    let weights = match weights_path {
        Some(path) if path.exists() => Some(WeightFile::load(&path)?),
        Some(path) if kinds.contains(&SchedulerKind::Aegis) => {
            return Err(Error::InvalidConfig(format!("weights file {} does not exist", path.display())))
        }
        _ => None,
    };
    if kinds.contains(&SchedulerKind::Aegis) && weights.is_none() {
        return Err(Error::MissingWeights);
    }
    let delta = (!ov.no_delta_gate).then_some(cfg.delta);
    let setup = EvalSetup {
        queues: &cfg.queue_config,
        baselines: cfg.baselines,
        weights: weights.as_ref(),
        delta,
        seed,
    };
    let spec = cfg.eval_source().build(SchedulerKind::Aegis, seed)?;
    let out = ov.out_dir(cfg);
    let mut rows = Vec::new();
    for kind in kinds {
        let trace = run_scheduler(&spec, kind, &setup)?;
        info!(
            "{kind}: loss ratio {:.4} ({} of {} dropped)",
            trace.metrics.loss_ratio, trace.metrics.dropped, trace.metrics.produced
        );
        save_trace(&trace, &out, &format!("eval_{kind}"))?;
        rows.push(EvalRow {
            scheduler: kind,
            conservation_violations: trace.conservation_violations,
            metrics: trace.metrics,
        });
    }
    let report = EvalReport {
        seed,
        delta_gate: delta.is_some(),
        rows,
    };
    std::fs::write(out.join("eval_report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

pub const TABLE5_WAITING: [u64; 3] = [2, 4, 8];
pub const TABLE5_PRESET: u64 = 7;
pub const TABLE5_TICKS: usize = 12;

pub const TABLE5_H4: &str = "1,9/8,[5/4],-,-,-,-,-,-,-,1,[9/8]";
pub const TABLE5_H3: &str = "2,[9/4],-,-,-,1,[5/4],-,-,-,[1],-";
pub const TABLE5_H2: &str = "[4],-,1,[3/2],-,[1],-,[1],-,[1],-,1";
pub const TABLE5_RESULT: &str = "2,3,4,2,1,2,3,2,1,2,3,4";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table5Report {
    pub h4: String,
    pub h3: String,
    pub h2: String,
    pub result: String,
}

impl Table5Report {
    pub fn render(&self) -> String {
        let ticks: Vec<String> = (1..=TABLE5_TICKS).map(|t| t.to_string()).collect();
        format!(
            "Time,{}\nh4,{}\nh3,{}\nh2,{}\nResult,{}\n",
            ticks.join(","),
            self.h4,
            self.h3,
            self.h2,
            self.result
        )
    }

    pub fn matches_reference(&self) -> bool {
        self.h4 == TABLE5_H4 && self.h3 == TABLE5_H3 && self.h2 == TABLE5_H2 && self.result == TABLE5_RESULT
    }
}

fn hungry_cell(h: Ratio<u64>, selected: bool) -> String {
    if h < Ratio::from_integer(1) {
        return "-".into();
    }
    if selected {
        format!("[{h}]")
    } else {
        h.to_string()
    }
}

/// Two tasks per queue, counters preset so every queue reads 8 ticks at the
/// first selection; a dispatched task returns to the back of its queue.
pub fn table5_trace() -> Result<Table5Report> {
    let cfg = QueueConfig::new(TABLE5_WAITING.to_vec(), 1, 8)?;
    let mut qs = QueueSystem::new(cfg)?;
    qs.set_elapsed(&[TABLE5_PRESET; 4])?;
    for q in 1..=4u32 {
        for k in 0..2 {
            qs.enqueue(TaskId(q * 10 + k), QueueId(q as usize))?;
        }
    }
    let mut rows: [Vec<String>; 3] = Default::default();
    let mut result = Vec::new();
    for _ in 0..TABLE5_TICKS {
        qs.advance(1);
        let h = qs.hungry_factors();
        let (queue, task) = qs
            .dispatch()
            .ok_or_else(|| Error::TraceMismatch("no queue selected".into()))?;
        for (row, q) in rows.iter_mut().zip([4usize, 3, 2]) {
            row.push(hungry_cell(h.get(QueueId(q)), queue == QueueId(q)));
        }
        result.push(queue.0.to_string());
        qs.enqueue(task, queue)?;
    }
    let [h4, h3, h2] = rows.map(|r| r.join(","));
    Ok(Table5Report {
        h4,
        h3,
        h2,
        result: result.join(","),
    })
}

pub fn cmd_table5() -> Result<Table5Report> {
    let report = table5_trace()?;
    print!("{}", report.render());
    if !report.matches_reference() {
        return Err(Error::TraceMismatch(format!(
            "result row {} differs from reference {TABLE5_RESULT}, or a hungry factor differs",
            report.result
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseReport {
    pub rows: Vec<WorstCaseRow>,
    /// Ratios never decrease from one E4-E6 analogue to the next, per task count.
    pub monotone: bool,
}

/// Whether ratios are nondecreasing across `names`, compared at equal
/// lowest-queue task counts.
pub fn nondecreasing_across(rows: &[WorstCaseRow], names: &[&str]) -> bool {
    let counts: Vec<usize> = rows
        .iter()
        .filter(|r| r.setting == names[0])
        .map(|r| r.lowest_tasks)
        .collect();
    counts.iter().all(|&m| {
        let ratios: Vec<f64> = names
            .iter()
            .filter_map(|n| rows.iter().find(|r| r.setting == *n && r.lowest_tasks == m))
            .map(|r| r.ratio)
            .collect();
        ratios.windows(2).all(|w| w[0] <= w[1])
    })
}

pub fn cmd_worstcase(cfg: &ExperimentConfig, ov: &Overrides) -> Result<WorstCaseReport> {
    let rows = worst_case_suite(&cfg.worstcase.settings())?;
    let monotone = nondecreasing_across(&rows, &["E4", "E5", "E6"]);
    let report = WorstCaseReport { rows, monotone };
    let out = ov.out_dir(cfg);
    std::fs::create_dir_all(&out)?;
    write_worstcase_csv(&report.rows, &out.join("worstcase.csv"))?;
    std::fs::write(out.join("worstcase.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    println!("setting,lowest_tasks,aegis_finish,rr_finish,ratio,bound");
    for r in &report.rows {
        println!(
            "{},{},{},{},{:.4},{:.4}",
            r.setting, r.lowest_tasks, r.aegis_finish, r.rr_finish, r.ratio, r.bound
        );
    }
    if let Some(r) = report.rows.iter().find(|r| !r.within_bound()) {
        return Err(Error::BoundViolation(format!(
            "{} with {} lowest-queue tasks: ratio {:.4} exceeds bound {:.4}",
            r.setting, r.lowest_tasks, r.ratio, r.bound
        )));
    }
    if !report.monotone {
        warn!("ratios are not nondecreasing across E4, E5, E6");
    }
    Ok(report)
}

fn write_worstcase_csv(rows: &[WorstCaseRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome of one `run` invocation, for printing.
#[derive(Debug)]
pub enum CommandOutput {
    Train(TrainReport),
    Eval(EvalReport),
    Worstcase(WorstCaseReport),
    Table5(Table5Report),
}

pub fn run_command(mode: Mode, cfg: Option<&ExperimentConfig>, ov: &Overrides) -> Result<CommandOutput> {
    if mode == Mode::Table5 {
        return cmd_table5().map(CommandOutput::Table5);
    }
    let cfg = cfg.ok_or_else(|| Error::InvalidConfig("--config is required for this mode".into()))?;
    match mode {
        Mode::Train => cmd_train(cfg, ov).map(CommandOutput::Train),
        Mode::Eval => cmd_eval(cfg, ov).map(CommandOutput::Eval),
        Mode::Worstcase => cmd_worstcase(cfg, ov).map(CommandOutput::Worstcase),
        Mode::Table5 => unreachable!(),
    }
}
