//! End-to-end runs of the discrete-event simulator.

mod common;

use std::sync::Arc;

use asyncfl::objective::{Dataset, Objective};
use asyncfl::protocol::{replay_audit, DpConfig, Event, Gate, NoiseSign};
use asyncfl::schedules::{check_eq4, DelayFunction, SampleKind, SampleSchedule, StepSchedule};
use asyncfl::simulator::{
    compare_runs, events_from_ndjson, events_to_ndjson, run, Allocation, Latency, NetworkModel, SimConfig, CSV_HEADER,
};
use asyncfl::Error;

fn data() -> Dataset {
    common::synthetic_dataset(400, 10, 21)
}

/// Exact-gate configuration with a constant schedule and the matching
/// constant delay τ = (d+1)·s, which is compatible with equality.
fn exact_gate_config(latency: Latency, seed: u64) -> SimConfig {
    let data = data();
    let (s, d) = (12u64, 1u32);
    let samples = SampleSchedule::with_rounds(SampleKind::Constant { s }, 60).unwrap();
    let mut config = common::small_config(3, samples, d, 0, seed, &data);
    config.delay = DelayFunction::Affine { m1: f64::from(d + 1) * s as f64, slope: 0.0 };
    config.gate = Gate::ExactDelay;
    config.network = NetworkModel { uplink: latency.clone(), downlink: latency };
    config
}

#[test]
fn slow_links_under_the_exact_gate_pass_the_audit() {
    for latency in [Latency::PerClient(vec![0, 7, 23]), Latency::Fixed(30), Latency::Uniform { lo: 5, hi: 40 }] {
        let config = exact_gate_config(latency.clone(), 4);
        let samples = SampleSchedule::with_rounds(SampleKind::Constant { s: 12 }, 60).unwrap();
        assert!(check_eq4(&samples, &config.delay, 1, 59).unwrap().holds());
        let out = run(&config).unwrap();
        let s = &out.trace.summary;
        assert!(s.audit.as_ref().unwrap().passed(), "{latency:?}: {:?}", s.audit);
        assert!(s.blocked_steps > 0, "{latency:?} never closed the gate");
        assert_eq!(s.total_steps, 720);
        let offline = replay_audit(&out.events, &config.delay, Some(Gate::ExactDelay)).unwrap();
        assert!(offline.passed(), "{offline}");
        assert_eq!(offline.steps_checked, 720);
    }
}

#[test]
fn latency_changes_timing_but_not_the_schedule() {
    let data = data();
    let samples = SampleSchedule::covering(SampleKind::Linear { a: 1.5, b: 8.0 }, 3000).unwrap();
    let mut fast = common::small_config(4, samples.clone(), 1, 1, 17, &data);
    let mut slow = common::small_config(4, samples, 1, 25, 17, &data);
    fast.log_events = false;
    slow.log_events = false;
    let a = run(&fast).unwrap();
    let b = run(&slow).unwrap();
    assert_eq!(a.trace.summary.rounds, b.trace.summary.rounds);
    assert_eq!(a.trace.summary.sizes, b.trace.summary.sizes);
    for c in 0..4 {
        assert_eq!(a.assignment.client_sizes(c), b.assignment.client_sizes(c));
    }
    assert!(b.trace.summary.final_time > a.trace.summary.final_time);
    let (acc_a, acc_b) = (a.trace.final_record().accuracy, b.trace.final_record().accuracy);
    assert!((acc_a - acc_b).abs() <= 0.01, "{acc_a} vs {acc_b}");
}

#[test]
fn runs_are_reproducible_and_seed_dependent() {
    let data = data();
    let samples = SampleSchedule::covering(SampleKind::Linear { a: 2.0, b: 5.0 }, 2000).unwrap();
    let config = common::small_config(3, samples, 1, 6, 8, &data);
    let a = run(&config).unwrap();
    let b = run(&config).unwrap();
    assert_eq!(a.trace.to_csv(), b.trace.to_csv());
    assert_eq!(a.events, b.events);
    assert_eq!(a.final_model, b.final_model);
    let other = run(&SimConfig { seed: 9, ..config }).unwrap();
    assert_ne!(a.final_model, other.final_model);
}

#[test]
fn counters_are_conserved() {
    let data = data();
    let samples = SampleSchedule::with_rounds(SampleKind::Linear { a: 3.0, b: 4.0 }, 25).unwrap();
    let total = samples.total();
    let config = common::small_config(5, samples, 2, 4, 3, &data);
    let out = run(&config).unwrap();
    let s = &out.trace.summary;
    assert_eq!(s.rounds, 25);
    assert_eq!(s.total_steps, total);
    assert_eq!(s.messages, 2 * 25 * 5);
    assert_eq!(out.trace.records.len(), 26);
    assert_eq!(out.trace.records[0].round, 0);
    assert_eq!(out.trace.final_record().round, 25);
    let steps = out.events.iter().filter(|e| matches!(e, Event::Step { .. })).count() as u64;
    assert_eq!(steps, total);
    let csv = out.trace.to_csv();
    assert_eq!(csv.lines().next(), Some(CSV_HEADER));
    assert_eq!(csv.lines().count(), 27);
    assert!(out.trace.records.windows(2).all(|w| w[0].time <= w[1].time && w[0].messages <= w[1].messages));
}

#[test]
fn skewed_client_probabilities_skew_the_work() {
    let data = data();
    let samples = SampleSchedule::with_rounds(SampleKind::Constant { s: 200 }, 30).unwrap();
    let mut config = common::small_config(2, samples, 1, 2, 5, &data);
    config.allocation = Allocation::Random {
        samples: SampleSchedule::with_rounds(SampleKind::Constant { s: 200 }, 30).unwrap(),
        p: vec![0.9, 0.1],
    };
    let out = run(&config).unwrap();
    let steps_of = |c: usize| {
        out.events
            .iter()
            .filter(|e| matches!(e, Event::Step { client, .. } if *client == c))
            .count() as f64
    };
    let share = steps_of(0) / (steps_of(0) + steps_of(1));
    assert!((share - 0.9).abs() < 0.02, "{share}");
    assert!(out.trace.summary.audit.as_ref().unwrap().passed());
}

#[test]
fn prescribed_per_client_sizes_are_used() {
    let data = data();
    let rows: Vec<Vec<u64>> = (0..10u64).map(|i| vec![5 + i, 0, 2 * i + 1]).collect();
    let totals: Vec<u64> = rows.iter().map(|r| r.iter().sum()).collect();
    let samples = SampleSchedule::from_sizes(totals).unwrap();
    let mut config = common::small_config(3, samples.clone(), 1, 3, 2, &data);
    config.allocation = Allocation::PerClient(rows.clone());
    let out = run(&config).unwrap();
    for c in 0..3 {
        let want: Vec<u64> = rows.iter().map(|r| r[c]).collect();
        assert_eq!(out.assignment.client_sizes(c), want);
    }
    assert_eq!(out.trace.summary.total_steps, samples.total());
    assert!(out.trace.summary.audit.as_ref().unwrap().passed());
}

#[test]
fn dp_runs_draw_noise_once_per_round() {
    let data = data();
    let samples = SampleSchedule::with_rounds(SampleKind::Constant { s: 20 }, 16).unwrap();
    let mut config = common::small_config(2, samples, 1, 2, 6, &data);
    config.dp = Some(DpConfig { clip: 0.5, sigma: 2.0, noise_sign: NoiseSign::AsPrinted });
    let out = run(&config).unwrap();
    let s = &out.trace.summary;
    assert_eq!(s.noise_draws_per_client, vec![16, 16]);
    assert!((s.aggregated_noise - 4.0 * 2.0 * 0.5).abs() < 1e-12);
    assert_eq!(out.trace.final_record().noise_draws, 32);
    assert!(s.audit.as_ref().unwrap().passed());
}

#[test]
fn eval_every_thins_the_trace_but_keeps_the_final_record() {
    let data = data();
    let samples = SampleSchedule::with_rounds(SampleKind::Constant { s: 10 }, 23).unwrap();
    let mut config = common::small_config(2, samples, 1, 2, 6, &data);
    config.eval_every = 5;
    let out = run(&config).unwrap();
    let rounds: Vec<usize> = out.trace.records.iter().map(|r| r.round).collect();
    assert_eq!(rounds, vec![0, 5, 10, 15, 20, 23]);
}

#[test]
fn event_log_round_trip_and_tamper_detection() {
    let data = data();
    let samples = SampleSchedule::with_rounds(SampleKind::Linear { a: 1.0, b: 4.0 }, 20).unwrap();
    let config = common::small_config(3, samples, 1, 5, 12, &data);
    let out = run(&config).unwrap();
    let text = events_to_ndjson(&out.events).unwrap();
    let back = events_from_ndjson(&text, std::path::Path::new("log.ndjson")).unwrap();
    assert_eq!(back, out.events);
    assert!(replay_audit(&back, &config.delay, Some(config.gate)).unwrap().passed());

    // Perturb one applied update: the replayed server model no longer
    // matches the next broadcast.
    let mut tampered = back.clone();
    let idx = tampered.iter().position(|e| matches!(e, Event::Apply { round: 3, .. })).unwrap();
    if let Event::Apply { update, .. } = &mut tampered[idx] {
        update[0] += 1e-3;
    }
    let report = replay_audit(&tampered, &config.delay, Some(config.gate)).unwrap();
    assert!(!report.passed());

    let broken = text.replacen('{', "{{", 1);
    match events_from_ndjson(&broken, std::path::Path::new("log.ndjson")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn impossible_delay_stalls_instead_of_hanging() {
    let config = SimConfig {
        delay: DelayFunction::Affine { m1: 0.0, slope: 0.0 },
        audit: false,
        ..exact_gate_config(Latency::Fixed(1), 1)
    };
    match run(&config) {
        Err(Error::Protocol(msg)) => assert!(msg.contains("stalled"), "{msg}"),
        other => panic!("expected a stall, got {:?}", other.map(|o| o.trace.summary)),
    }
}

#[test]
fn comparisons_require_equal_budgets() {
    let data = data();
    let a = SampleSchedule::covering(SampleKind::Constant { s: 10 }, 500).unwrap();
    let b = SampleSchedule::covering(SampleKind::Linear { a: 2.0, b: 10.0 }, 500).unwrap();
    let mut ca = common::small_config(2, a, 1, 2, 1, &data);
    let mut cb = common::small_config(2, b, 1, 2, 1, &data);
    ca.label = "constant".into();
    cb.label = "linear".into();
    ca.budget = 500;
    cb.budget = 500;
    let rows = compare_runs(&[ca.clone(), cb.clone()]).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].rounds < rows[0].rounds);
    assert!(rows[1].messages < rows[0].messages);
    cb.budget = 501;
    match compare_runs(&[ca, cb]) {
        Err(Error::Validation(items)) => assert!(items[0].contains("linear"), "{items:?}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn client_datasets_may_differ_in_size() {
    let data = data();
    let parts = data.partition(3, true, &mut asyncfl::rng::stream(1, asyncfl::rng::Purpose::Data, 0));
    let samples = SampleSchedule::with_rounds(SampleKind::Constant { s: 30 }, 10).unwrap();
    let mut config = common::small_config(3, samples, 1, 3, 1, &data);
    config.train = Arc::new(parts);
    config.objective = Objective::new(data.dimension(), 0.0, false).unwrap();
    config.steps = StepSchedule::Constant { eta: 0.05 };
    let out = run(&config).unwrap();
    assert!(out.trace.summary.audit.as_ref().unwrap().passed());
    assert_eq!(out.final_model.len(), data.dimension());
}
