use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use provsched::agent::{quantize_int4, QNetwork, WeightFile};
use provsched::features::{
    delta_gate, normalize, to_integer_state, update_context, CycleObservation, GateDecision, NormalizationSpec,
    TaskContext, DEFAULT_DELTA, DEFAULT_EMA_ALPHA, NUM_FEATURES,
};
use provsched::harness::commands::{run_scheduler, EvalSetup};
use provsched::provenance::{ConsumerProfile, ProducerProfile, RateLaw};
use provsched::queue::QueueConfig;
use provsched::sim::{settled_skip_ratio, BaselineParams, Metrics, ScenarioSpec, SchedulerKind, TaskSpec};

fn weights(seed: u64) -> WeightFile {
    let net = QNetwork::random(&mut ChaCha8Rng::seed_from_u64(seed));
    let q = quantize_int4(&net);
    WeightFile::new(1, Some(&net), Some(&q), NormalizationSpec::with_caps([256.0; NUM_FEATURES]))
}

fn scenario(producers: Vec<ProducerProfile>, duration: u64) -> ScenarioSpec {
    let mut tasks = vec![TaskSpec::consumer(0)];
    for (i, p) in producers.into_iter().enumerate() {
        tasks.push(TaskSpec {
            producer: p,
            ..TaskSpec::new(i as u32 + 1)
        });
    }
    ScenarioSpec {
        tasks,
        cores: 1,
        duration,
        buffer_capacity: 64,
        consumer: ConsumerProfile::new(6).unwrap(),
        scheduler: SchedulerKind::Aegis,
        seed: 3,
    }
}

fn run(spec: &ScenarioSpec, w: &WeightFile, gate: bool) -> (Metrics, Option<f64>) {
    let queues = QueueConfig::new(vec![4, 8, 16], 4, 16).unwrap();
    let setup = EvalSetup {
        queues: &queues,
        baselines: BaselineParams::default(),
        weights: Some(w),
        delta: gate.then_some(DEFAULT_DELTA),
        seed: 5,
    };
    let t = run_scheduler(spec, SchedulerKind::Aegis, &setup).unwrap();
    assert_eq!(t.conservation_violations, 0);
    (t.metrics, settled_skip_ratio(&t.records, WARMUP))
}

/// Decisions per task left out while the averages forget their seed.
const WARMUP: usize = 8;

fn doubling() -> ProducerProfile {
    ProducerProfile {
        events_per_tick: RateLaw::Doubling {
            start: 1,
            max: u64::MAX >> 8,
        },
    }
}

#[test]
fn gate_skips_most_decisions_on_a_steady_workload() {
    // the consumer keeps up whatever the placement
    let steady = scenario((0..3).map(|_| ProducerProfile::constant(1)).collect(), 20_000);
    for seed in [1, 2, 3] {
        let w = weights(seed);
        let (on, settled) = run(&steady, &w, true);
        let (off, _) = run(&steady, &w, false);
        assert!(settled.unwrap() >= 0.5, "{settled:?}");
        assert!(on.skip_ratio >= 0.5);
        assert_eq!(on.loss_ratio, off.loss_ratio);
        assert_eq!(on.dropped, 0);
        assert_eq!(off.dropped, 0);
        assert!(on.inference_count < off.inference_count);
        assert_eq!(off.skip_count, 0);
    }
}

#[test]
fn gate_never_skips_a_doubling_workload_once_settled() {
    let spec = scenario(vec![doubling(), doubling()], 300);
    let (m, settled) = run(&spec, &weights(1), true);
    assert_eq!(settled, Some(0.0));
    assert!(m.inference_count > 2 * WARMUP as u64);
}

fn observation(events: u64) -> CycleObservation {
    CycleObservation {
        ran_ticks: 4,
        events,
        availability: 1.0,
        ..Default::default()
    }
}

/// With observations `x * 2^k` and the first one seeding the average, the
/// average is `x * (2/9 * 2^k + 7/9 * (7/8)^k)`.
#[test]
fn doubling_average_follows_closed_form() {
    assert_eq!(DEFAULT_EMA_ALPHA, 0.125);
    let x = 3.0;
    let mut ctx = TaskContext::default();
    let mut prev: Option<TaskContext> = None;
    let mut skipped = Vec::new();
    for k in 0..30 {
        ctx = update_context(&ctx, &observation((x as u64) << k), DEFAULT_EMA_ALPHA);
        let want = x * (2.0 / 9.0 * 2f64.powi(k) + 7.0 / 9.0 * 0.875f64.powi(k));
        assert!((ctx.nr_event - want).abs() <= 1e-9 * want, "k={k}");
        if delta_gate(prev.as_ref(), &ctx, DEFAULT_DELTA) == GateDecision::Skip {
            skipped.push(k);
        }
        prev = Some(ctx);
    }
    // the seed still dominates for the first two updates
    assert_eq!(skipped, vec![1, 2]);
    assert!(skipped.iter().all(|&k| (k as usize) < WARMUP));
}

#[test]
fn constant_cycles_settle_exactly() {
    let mut ctx = TaskContext::default();
    let mut prev = None;
    for k in 0..20 {
        ctx = update_context(&ctx, &observation(40), DEFAULT_EMA_ALPHA);
        assert_eq!(ctx.nr_event, 40.0);
        assert_eq!(ctx.runtime, 4.0 * (k + 1) as f64);
        let d = delta_gate(prev.as_ref(), &ctx, DEFAULT_DELTA);
        assert_eq!(d, if k == 0 { GateDecision::Infer } else { GateDecision::Skip });
        prev = Some(ctx);
    }
}

#[test]
fn integer_state_of_engine_contexts_is_in_range() {
    let spec = scenario(vec![ProducerProfile::constant(9), doubling(), ProducerProfile::constant(1)], 400);
    let queues = QueueConfig::new(vec![4, 8, 16], 4, 16).unwrap();
    let policy = provsched::sim::AegisScheduler::fixed(queues).unwrap();
    let mut sim = provsched::sim::Simulation::new(spec, policy, Default::default()).unwrap();
    let norm = NormalizationSpec::with_caps([100.0; NUM_FEATURES]);
    while !sim.is_done() {
        sim.step().unwrap();
        for (_, ctx) in sim.contexts() {
            let v = normalize(ctx, &norm);
            assert!(v.iter().all(|x| (0.0..=128.0).contains(x)));
            let s = to_integer_state(&v);
            assert!(s.iter().all(|x| (0..=128).contains(x)));
        }
    }
}
