use provsched::harness::commands::nondecreasing_across;
use provsched::queue::{finish_time_ratio_bound, QueueConfig, QueueId};
use provsched::sim::worstcase::*;
use provsched::sim::{run, RoundRobin};

fn setting(name: &str, wt: &[u64], primary: usize, higher: usize, lowest: Vec<usize>, demand: u64) -> WorstCaseSetting {
    WorstCaseSetting {
        name: name.into(),
        waiting_times: wt.to_vec(),
        slice: wt.last().unwrap() + 1,
        primary_tasks: primary,
        higher_tasks: higher,
        lowest_tasks: lowest,
        demand_slices: demand,
    }
}

#[test]
fn every_reference_setting_is_within_its_bound() {
    let rows = worst_case_suite(&table7_settings(100)).unwrap();
    assert_eq!(rows.len(), 24);
    for r in &rows {
        assert!(r.within_bound(), "{} m={}: {} > {}", r.setting, r.lowest_tasks, r.ratio, r.bound);
        assert!(r.ratio > 0.0);
    }
    assert!(nondecreasing_across(&rows, &["E4", "E5", "E6"]));
}

#[test]
fn bound_column_matches_closed_form() {
    for s in table7_settings(100) {
        let cfg = s.queue_config().unwrap();
        let b = finish_time_ratio_bound(&cfg).unwrap();
        let n = s.waiting_times.len() as f64 + 1.0;
        let want = *s.waiting_times.last().unwrap() as f64 / s.waiting_times[0] as f64 * n;
        let rows = run_setting(&s).unwrap();
        assert!((*b.numer() as f64 / *b.denom() as f64 - want).abs() < 1e-9);
        assert!(rows.iter().all(|r| (r.bound - want).abs() < 1e-9));
    }
}

#[test]
fn two_queue_setting_respects_bound() {
    let s = setting("E1", &[50], 4, 0, vec![1, 3, 9], 2);
    for r in run_setting(&s).unwrap() {
        assert!(r.ratio <= 2.0, "{r:?}");
    }
}

#[test]
fn uncontended_lowest_queue_matches_round_robin() {
    let s = setting("solo", &[3, 9, 27], 0, 0, vec![1], 40);
    let rows = run_setting(&s).unwrap();
    let r = &rows[0];
    assert!((r.ratio - 1.0).abs() <= 0.10, "{r:?}");
}

#[test]
fn ratio_grows_with_lowest_waiting_time() {
    let a = setting("A", &[20, 400], 10, 10, vec![10], 3);
    let b = setting("B", &[20, 800], 10, 10, vec![10], 3);
    let c = setting("C", &[20, 1600], 10, 10, vec![10], 3);
    let rows = worst_case_suite(&[a, b, c]).unwrap();
    assert!(nondecreasing_across(&rows, &["A", "B", "C"]));
}

/// The slice-stepped suite and the tick engine agree on the finish tick of
/// the lowest queue's tasks.
#[test]
fn slice_stepping_agrees_with_tick_engine() {
    for (wt, primary, higher, m, demand) in [
        (vec![4u64, 9], 2usize, 2usize, 3usize, 2u64),
        (vec![3, 7, 15], 1, 3, 2, 3),
        (vec![5, 11], 3, 1, 5, 1),
        (vec![2, 6, 10], 2, 2, 4, 2),
    ] {
        let s = setting("x", &wt, primary, higher, vec![m], demand);
        let want = aegis_finish(&s, m).unwrap();
        let cfg = s.queue_config().unwrap();
        let n = cfg.num_queues;
        let mut per_queue = vec![higher; n];
        per_queue[0] = primary;
        per_queue[n - 1] = m;
        let (spec, policy) = saturated_scenario(&cfg, &per_queue, Some(demand * s.slice), want + 10).unwrap();
        let (trace, _) = run(&spec, policy).unwrap();
        let lowest_ids: Vec<_> = spec
            .tasks
            .iter()
            .filter(|t| t.initial_queue == Some(QueueId(n)))
            .map(|t| t.id)
            .collect();
        let got = lowest_ids.iter().map(|id| trace.metrics.finish_times[id]).max().unwrap();
        assert_eq!(got, want, "{wt:?}");

        let rr_want = rr_finish(&s, m);
        let (rr_trace, _) = run(&spec, RoundRobin::new(s.slice)).unwrap();
        let rr_got = lowest_ids.iter().map(|id| rr_trace.metrics.finish_times[id]).max().unwrap();
        assert_eq!(rr_got, rr_want, "{wt:?}");
    }
}

#[test]
fn settings_validate() {
    let mut s = setting("bad", &[4, 9], 1, 1, vec![1], 1);
    s.slice = 9;
    assert!(run_setting(&s).is_err());
    let s = setting("bad", &[4, 9], 1, 1, vec![0], 1);
    assert!(run_setting(&s).is_err());
    assert!(QueueConfig::new(vec![9, 4], 10, 9).is_err());
}
