//! Properties of sample-size sequences, delay functions and step sizes.

use asyncfl::schedules::{
    check_eq4, constant_step_sample_cap, lemma4_sample_sequence, lemma5_alpha, lemma5_alpha_upper,
    lemma5_round_steps, theorem5_sample_sequence, DelayFunction, Gamma, Offset, SampleKind, SampleSchedule,
    StepSchedule,
};
use proptest::prelude::*;

fn sample_kind() -> impl Strategy<Value = SampleKind> {
    prop_oneof![
        (1u64..50).prop_map(|s| SampleKind::Constant { s }),
        (0.0f64..5.0, 0.0f64..20.0).prop_map(|(a, b)| SampleKind::Linear { a, b }),
        (0.0f64..5.0, 0.0f64..20.0, 0.1f64..1.5).prop_map(|(a, b, c)| SampleKind::PowerLaw { a, b, c }),
        (0u32..3, 20.0f64..5000.0).prop_map(|(d, m)| SampleKind::Theorem5 { d, m }),
    ]
}

proptest! {
    #[test]
    fn sizes_are_positive_and_increasing_kinds_do_not_decrease(kind in sample_kind(), rounds in 1usize..300) {
        let s = SampleSchedule::with_rounds(kind.clone(), rounds).unwrap();
        prop_assert_eq!(s.rounds(), rounds);
        prop_assert!(s.sizes().iter().all(|&x| x >= 1));
        if kind.is_increasing_kind() {
            prop_assert!(s.is_non_decreasing());
        }
    }

    #[test]
    fn prefix_sums_and_round_lookup_agree(kind in sample_kind(), rounds in 1usize..200) {
        let s = SampleSchedule::with_rounds(kind, rounds).unwrap();
        let mut acc = 0u64;
        for i in 0..rounds {
            prop_assert_eq!(s.prefix(i), acc);
            acc += s.size(i);
            prop_assert_eq!(s.cumulative(i), acc);
            prop_assert_eq!(s.round_of(s.prefix(i)), Some(i));
            prop_assert_eq!(s.round_of(s.cumulative(i) - 1), Some(i));
        }
        prop_assert_eq!(s.total(), acc);
        prop_assert_eq!(s.round_of(acc), None);
    }

    #[test]
    fn covering_reaches_the_budget_with_its_last_round(kind in sample_kind(), budget in 1u64..20_000) {
        let s = SampleSchedule::covering(kind, budget).unwrap();
        prop_assert!(s.total() >= budget);
        prop_assert!(s.total() - s.size(s.rounds() - 1) < budget);
    }

    #[test]
    fn step_sizes_positive_and_non_increasing(
        kind in sample_kind(),
        eta0 in 1e-4f64..1.0,
        beta in 0.0f64..1.0,
        sqrt in any::<bool>(),
    ) {
        let s = SampleSchedule::with_rounds(kind, 100).unwrap();
        let steps = if sqrt {
            StepSchedule::InverseSqrt { eta0, beta }
        } else {
            StepSchedule::InverseLinear { eta0, beta }
        };
        steps.validate(&s).unwrap();
        let etas = steps.round_steps(&s).unwrap();
        prop_assert!(etas.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn round_diminishing_steps_non_increasing(
        a in 0.0f64..4.0,
        b in 1.0f64..30.0,
        a0 in 0.1f64..10.0,
        q in 0.05f64..1.0,
        e0 in 1.0f64..100.0,
    ) {
        let s = SampleSchedule::with_rounds(SampleKind::Linear { a, b }, 80).unwrap();
        let steps = StepSchedule::RoundDiminishing { a0, q, offset: Offset::Constant(e0) };
        let etas = steps.round_steps(&s).unwrap();
        prop_assert!(etas.iter().all(|&e| e > 0.0));
        prop_assert!(etas.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn delay_lag_is_monotone(m0 in 3.0f64..1e4, m1 in 0.0f64..50.0, t in 0.0f64..1e7) {
        let df = DelayFunction::sqrt_log(m0, m1);
        let tau = df.eval(t).unwrap();
        let next = df.eval(t + 1.0).unwrap();
        prop_assert!(tau >= 0.0);
        prop_assert!((t + 1.0 - next) - (t - tau) >= -1e-9);
    }

    #[test]
    fn constant_step_cap_shrinks_with_d(eta in 1e-4f64..0.01, mu in 1e-3f64..1.0, d in 0u32..20) {
        let a = constant_step_sample_cap(eta, mu, d).unwrap();
        let b = constant_step_sample_cap(eta, mu, d + 1).unwrap();
        prop_assert!(b <= a);
        prop_assert_eq!(a, (1.0 / (eta * mu * f64::from(d + 1))).floor() as u64);
    }
}

#[test]
fn sqrt_log_delay_at_e4() {
    // τ = √(e⁴/(4·4)) = e²/4.
    let t = 4f64.exp();
    let tau = DelayFunction::sqrt_log(0.0, 0.0).eval(t).unwrap();
    assert!((tau - 2f64.exp() / 4.0).abs() < 1e-12, "{tau}");
}

#[test]
fn log_delay_rejects_small_arguments() {
    assert!(DelayFunction::sqrt_log(0.0, 0.0).eval(1.0).is_err());
    assert!(DelayFunction::sqrt_log(0.5, 0.0).eval(0.3).is_err());
}

#[test]
fn affine_delay_with_zero_slope_is_constant() {
    let df = DelayFunction::Affine { m1: 7.0, slope: 0.0 };
    assert_eq!(df.eval(5.0).unwrap(), 7.0);
}

#[test]
fn delay_lag_monotone_over_a_long_range() {
    let df = DelayFunction::theorem5(1, 2900.0, 0.0).unwrap();
    let points: Vec<f64> = (10..=1_000_000).step_by(997).map(f64::from).collect();
    df.validate_at(&points).unwrap();
    let mut prev = f64::NEG_INFINITY;
    for t in (10..10_000).map(f64::from) {
        let lag = t - df.eval(t).unwrap();
        assert!(lag >= prev - 1e-9, "t − τ(t) decreases at t = {t}");
        prev = lag;
    }
}

#[test]
fn theorem5_first_size_matches_direct_evaluation() {
    let direct = ((2901.0f64 / 16.0) / 1450.5f64.ln()).ceil() as u64;
    assert_eq!(theorem5_sample_sequence(0, 2900.0, 0).unwrap(), direct);
    assert_eq!(direct, 25);
}

#[test]
fn theorem5_domain_error() {
    // (m+i+1)/(2(d+1)) = 1.
    assert!(theorem5_sample_sequence(0, 1.0, 0).is_err());
}

#[test]
fn theorem5_sequence_grows_by_at_most_a_factor_three() {
    for (d, m) in [(0, 100.0), (1, 2900.0), (2, 500.0)] {
        let mut prev = theorem5_sample_sequence(d, m, 0).unwrap();
        for i in 1..=10_000 {
            let s = theorem5_sample_sequence(d, m, i).unwrap();
            assert!(s >= prev, "d={d} m={m} i={i}");
            assert!(s <= 3 * prev, "d={d} m={m} i={i}: {s} > 3·{prev}");
            prev = s;
        }
    }
}

#[test]
fn lemma4_with_four_ln_matches_theorem5() {
    for (d, m) in [(0u32, 100.0), (1, 2900.0), (3, 700.0)] {
        for i in 0..=1000 {
            let a = lemma4_sample_sequence(&Gamma::FourLn, 2.0, d, m, i).unwrap();
            let b = theorem5_sample_sequence(d, m, i).unwrap();
            assert_eq!(a, b, "d={d} m={m} i={i}");
        }
    }
}

#[test]
fn lemma4_with_constant_gamma_is_linear() {
    // S(x) = x/2 for g = 2, γ ≡ 1, so sᵢ = ⌈(m+i+1)/(2(d+1)²)⌉.
    for (d, m) in [(0u32, 5.0), (1, 40.0), (2, 9.0)] {
        for i in 0..200u64 {
            let d1 = f64::from(d + 1);
            let want = ((((m + i as f64 + 1.0) / (2.0 * d1 * d1)).ceil()) as u64).max(1);
            assert_eq!(lemma4_sample_sequence(&Gamma::Constant(1.0), 2.0, d, m, i).unwrap(), want);
        }
    }
}

/// Independent oracle: Σ_{j=i−d}^{i} s_j by direct summation.
fn eq4_holds_by_summation(sizes: &[u64], tau: impl Fn(f64) -> f64, d: usize, i_max: usize) -> Option<usize> {
    (d + 1..=i_max).find(|&i| {
        let through: u64 = sizes[..=i].iter().sum();
        let window: u64 = sizes[i - d..=i].iter().sum();
        tau(through as f64) < window as f64
    })
}

#[test]
fn theorem5_pairing_is_compatible() {
    for (d, m) in [(0u32, 100.0), (1, 2900.0), (2, 3000.0)] {
        let samples = SampleSchedule::with_rounds(SampleKind::Theorem5 { d, m }, 501).unwrap();
        let delay = DelayFunction::theorem5(d, m, 0.0).unwrap();
        let report = check_eq4(&samples, &delay, d, 500).unwrap();
        assert!(report.holds(), "d={d} m={m}: {report}");
        assert_eq!(eq4_holds_by_summation(samples.sizes(), |t| delay.eval(t).unwrap(), d as usize, 500), None);
    }
}

#[test]
fn lemma4_pairing_is_compatible() {
    for gamma in [Gamma::FourLn, Gamma::Constant(1.0), Gamma::Constant(3.0)] {
        let (d, m) = (1u32, 200.0);
        let kind = SampleKind::Lemma4 { gamma: gamma.clone(), g: 2.0, d, m };
        let samples = SampleSchedule::with_rounds(kind, 501).unwrap();
        let delay = DelayFunction::lemma4(gamma.clone(), 2.0, d, m);
        let report = check_eq4(&samples, &delay, d, 500).unwrap();
        assert!(report.holds(), "{gamma:?}: {report}");
        assert_eq!(eq4_holds_by_summation(samples.sizes(), |t| delay.eval(t).unwrap(), 1, 500), None);
    }
}

#[test]
fn constant_sizes_with_matching_constant_delay_hold_with_equality() {
    let (s, d) = (40u64, 2u32);
    let samples = SampleSchedule::with_rounds(SampleKind::Constant { s }, 50).unwrap();
    let delay = DelayFunction::Affine { m1: f64::from(d + 1) * s as f64, slope: 0.0 };
    assert!(check_eq4(&samples, &delay, d, 49).unwrap().holds());
    let tight = DelayFunction::Affine { m1: f64::from(d + 1) * s as f64 - 1.0, slope: 0.0 };
    assert_eq!(check_eq4(&samples, &tight, d, 49).unwrap().violation.unwrap().round, 3);
}

#[test]
fn doubling_sizes_violate_sqrt_delay_at_the_first_index() {
    let sizes: Vec<u64> = (0..20).map(|i| 1u64 << i).collect();
    let samples = SampleSchedule::from_sizes(sizes.clone()).unwrap();
    // τ(t) = √t as an affine-free table over the needed range.
    let values: Vec<f64> = (0..samples.total()).map(|t| (t as f64).sqrt()).chain([(samples.total() as f64).sqrt()]).collect();
    let delay = DelayFunction::Table(values);
    let report = check_eq4(&samples, &delay, 1, 19).unwrap();
    let oracle = eq4_holds_by_summation(&sizes, |t| t.sqrt(), 1, 19);
    assert_eq!(report.violation.as_ref().map(|v| v.round), oracle);
    assert_eq!(oracle, Some(2));
}

#[test]
fn check_eq4_rejects_short_ranges() {
    let samples = SampleSchedule::with_rounds(SampleKind::Constant { s: 3 }, 10).unwrap();
    assert!(check_eq4(&samples, &DelayFunction::Unbounded, 2, 2).is_err());
    assert!(check_eq4(&samples, &DelayFunction::Unbounded, 2, 10).is_err());
}

#[test]
fn zero_exponent_round_steps_are_constant() {
    let s = SampleSchedule::with_rounds(SampleKind::Linear { a: 1.0, b: 2.0 }, 30).unwrap();
    for i in 0..30 {
        assert_eq!(lemma5_round_steps(&s, 0.7, 0.0, &Offset::Constant(5.0), i).unwrap(), 0.7);
    }
}

#[test]
fn theorem5_round_steps_match_closed_form() {
    let (d, m, mu) = (1u32, 2900.0, 0.01);
    let samples = SampleSchedule::with_rounds(SampleKind::Theorem5 { d, m }, 60).unwrap();
    let delay = DelayFunction::theorem5(d, m, 0.0).unwrap();
    let DelayFunction::Power { m1, .. } = delay.clone() else { panic!("power delay") };
    let steps = StepSchedule::theorem5(mu, delay);
    for i in 0..60 {
        let before: f64 = samples.sizes()[..i].iter().sum::<u64>() as f64;
        let z = (m + 1.0) * (m + 1.0) / 4.0 + before;
        let want = (12.0 / mu) / (before + 2.0 * m1 + (z / z.ln()).sqrt());
        let got = steps.round_step(&samples, i).unwrap();
        assert!(((got - want) / want).abs() < 1e-12, "i={i}: {got} vs {want}");
    }
}

#[test]
fn theorem5_alpha_stays_within_three_a0() {
    let (d, m, mu) = (1u32, 2900.0, 0.5);
    let samples = SampleSchedule::with_rounds(SampleKind::Theorem5 { d, m }, 201).unwrap();
    let delay = DelayFunction::theorem5(d, m, 0.0).unwrap();
    let offset = Offset::ScaledDelay { factor: 2.0, delay };
    let a0 = 12.0 / mu;
    let upper = lemma5_alpha_upper(a0, 1.0, m, 2.0);
    assert!(upper <= 3.0 * a0 + 1e-9);
    let mut max_alpha = 0.0f64;
    for t in 0..samples.total() {
        let alpha = lemma5_alpha(&samples, a0, 1.0, &offset, t).unwrap();
        assert!(alpha >= a0 * (1.0 - 1e-12), "t={t}: α = {alpha} < a₀");
        max_alpha = max_alpha.max(alpha);
    }
    assert!(max_alpha <= 3.0 * a0, "max α = {max_alpha} > 3·{a0}");
}
