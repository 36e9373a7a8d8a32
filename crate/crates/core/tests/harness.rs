use std::path::Path;

use provsched::harness::commands::{table5_trace, TABLE5_RESULT};
use provsched::harness::*;
use provsched::sim::export::{metrics_json, read_metrics_json, read_trace_csv, trace_csv_string};
use provsched::sim::{Metrics, SchedulerKind};
use provsched::Error;

/// A producer the consumer always keeps up with.
fn easy_config(out: &Path) -> ExperimentConfig {
    let json = format!(
        r#"{{
  "seed": 3,
  "scenario": {{
    "kind": "super_producer",
    "intensity": 1,
    "scan_rate": 2,
    "drain_per_tick": 8,
    "buffer_capacity": 64,
    "duration": 40000
  }},
  "queue_config": {{ "num_queues": 4, "waiting_times": [13, 38, 108], "slice": 4, "t_hat_inf": 64 }},
  "hyperparams": {{ "batch": 32, "replay_capacity": 2000 }},
  "training": {{
    "max_cycles": 4000,
    "max_ticks": 40000,
    "train_every": 4,
    "reward_window": 200,
    "epoch_ticks": 500,
    "calibration_ticks": 1000,
    "converge_epochs": 3,
    "delta_gate": true
  }},
  "outputs": {{ "out_dir": {:?} }}
}}"#,
        out.display().to_string()
    );
    ExperimentConfig::from_json(&json).unwrap()
}

fn message(err: Error) -> String {
    match err {
        Error::InvalidConfig(m) | Error::InvalidSpec(m) => m,
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let good = easy_config(dir.path());
    let cases: Vec<(Box<dyn Fn(&mut ExperimentConfig)>, &str)> = vec![
        (Box::new(|c| c.training.train_every = 0), "training.train_every"),
        (Box::new(|c| c.training.reward_window = 0), "training.reward_window"),
        (Box::new(|c| c.delta = 1.5), "delta"),
        (Box::new(|c| c.hyperparams.gamma = 1.0), "hyperparams.gamma"),
        (Box::new(|c| c.hyperparams.replay_capacity = 1), "hyperparams.replay_capacity"),
        (Box::new(|c| c.time_scale = 0.0), "time_scale"),
        (Box::new(|c| c.baselines.mlfq_levels = 0), "baselines.mlfq_levels"),
    ];
    for (mutate, name) in cases {
        let mut cfg = good.clone();
        mutate(&mut cfg);
        let msg = message(cfg.validate().unwrap_err());
        assert!(msg.starts_with(name), "{msg:?} should name {name}");
    }
    let mut cfg = good.clone();
    if let ScenarioSource::SuperProducer(sp) = &mut cfg.scenario {
        sp.drain_per_tick = 0;
    }
    assert!(message(cfg.validate().unwrap_err()).contains("drain_per_tick"));

    let unknown = good.to_json().unwrap().replacen("\"seed\"", "\"sead\"", 1);
    assert!(ExperimentConfig::from_json(&unknown).is_err());
}

#[test]
fn config_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = easy_config(dir.path());
    let again = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
    assert_eq!(again, cfg);
    let shipped = ExperimentConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/super_producer.json"));
    shipped.unwrap();
}

#[test]
fn table5_command_prints_reference_row() {
    let report = cmd_table5().unwrap();
    assert_eq!(report.result, TABLE5_RESULT);
    assert_eq!(report, table5_trace().unwrap());
    let text = report.render();
    assert!(text.starts_with("Time,1,2,3,4,5,6,7,8,9,10,11,12\n"));
    assert!(text.ends_with(&format!("Result,{TABLE5_RESULT}\n")));
    let out = run_command(Mode::Table5, None, &Overrides::default()).unwrap();
    assert!(matches!(out, CommandOutput::Table5(_)));
}

#[test]
fn eval_without_weights_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = easy_config(dir.path());
    let err = cmd_eval(&cfg, &Overrides::default()).unwrap_err();
    assert!(matches!(err, Error::MissingWeights));
    assert_eq!(exit_code(&err), 2);

    let ov = Overrides {
        weights: Some(dir.path().join("nope.json")),
        ..Default::default()
    };
    assert!(matches!(cmd_eval(&cfg, &ov).unwrap_err(), Error::InvalidConfig(_)));

    // baselines alone need no weights
    let ov = Overrides {
        scheduler: Some(SchedulerKind::Fifo),
        ..Default::default()
    };
    let report = cmd_eval(&cfg, &ov).unwrap();
    assert_eq!(report.rows.len(), 1);
}

#[test]
fn saved_trace_reproduces_its_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = easy_config(dir.path());
    let ov = Overrides {
        scheduler: Some(SchedulerKind::Rr),
        ..Default::default()
    };
    let report = cmd_eval(&cfg, &ov).unwrap();
    let csv = std::fs::read(dir.path().join("eval_rr.csv")).unwrap();
    let records = read_trace_csv(csv.as_slice()).unwrap();
    assert_eq!(Metrics::from_records(&records), report.rows[0].metrics);
    assert_eq!(trace_csv_string(&records).unwrap().as_bytes(), csv.as_slice());
    let json = std::fs::read_to_string(dir.path().join("eval_rr.json")).unwrap();
    let metrics = read_metrics_json(&json).unwrap();
    assert_eq!(metrics, report.rows[0].metrics);
    assert_eq!(metrics_json(&metrics).unwrap(), json);
}

#[test]
fn easy_scenario_converges_with_no_drops() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = easy_config(dir.path());
    let ov = Overrides {
        sync_train: true,
        ..Default::default()
    };
    let report = cmd_train(&cfg, &ov).unwrap();
    assert!(report.converged);
    assert!(report.train_steps > 0);
    assert!(report.epochs.iter().all(|e| e.mean_reward_c == 0.0 && e.dropped == 0));
    assert!(dir.path().join("weights.json").exists());

    let eval = cmd_eval(&cfg, &Overrides::default()).unwrap();
    let aegis = eval.row(SchedulerKind::Aegis).unwrap();
    assert_eq!(aegis.metrics.dropped, 0);
    assert!(eval.rows.iter().all(|r| r.conservation_violations == 0));
}

#[test]
fn synchronous_training_is_byte_identical() {
    let outputs: Vec<(Vec<u8>, Vec<u8>)> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let cfg = easy_config(dir.path());
            let ov = Overrides {
                sync_train: true,
                ..Default::default()
            };
            cmd_train(&cfg, &ov).unwrap();
            (
                std::fs::read(dir.path().join("weights.json")).unwrap(),
                std::fs::read(dir.path().join("train_log.json")).unwrap(),
            )
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);

    let dir = tempfile::tempdir().unwrap();
    let cfg = easy_config(dir.path());
    let ov = Overrides {
        sync_train: true,
        seed: Some(4),
        ..Default::default()
    };
    cmd_train(&cfg, &ov).unwrap();
    assert_ne!(std::fs::read(dir.path().join("weights.json")).unwrap(), outputs[0].0);
}

#[test]
fn worstcase_command_writes_its_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = easy_config(dir.path());
    let report = cmd_worstcase(&cfg, &Overrides::default()).unwrap();
    assert!(report.monotone);
    assert!(report.rows.iter().all(|r| r.within_bound()));
    let csv = std::fs::read_to_string(dir.path().join("worstcase.csv")).unwrap();
    assert_eq!(csv.lines().count(), report.rows.len() + 1);
}

#[test]
fn missing_config_is_reported() {
    let err = run_command(Mode::Train, None, &Overrides::default()).unwrap_err();
    assert_eq!(exit_code(&err), 2);
}

