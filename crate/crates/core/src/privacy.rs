//! Moments accountant for subsampled Gaussian noise with varying sample
//! sizes, the closed-form noise requirement, regime thresholds K⁻/K⁺/K*,
//! the r₀(σ) fixed point and the parameter-selection planner.

use std::f64::consts::E;
use std::fmt;

use crate::error::{Error, Result};

/// Smallest σ for which the r₀ fixed point is admissible.
pub const SIGMA_MIN_FIXED_POINT: f64 = 1.137;

/// Upper limit on the λ search of [`numeric_delta`].
pub const LAMBDA_SEARCH_CAP: u32 = 10_000;

/// Jump factor between the two regimes when r₀ is the fixed point.
pub const REGIME_JUMP: f64 = 1.21;

const R0_TOLERANCE: f64 = 1e-12;
const R0_MAX_ITERATIONS: usize = 10_000;
const GAMMA_TOLERANCE: f64 = 1e-6;
const PLANNER_MAX_ITERATIONS: usize = 50;

/// Moments of a per-client sample-size schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleMoments {
    /// Number of rounds.
    pub t: usize,
    /// Ŝ₁, Ŝ₂, Ŝ₃.
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    /// ρ = Ŝ₁Ŝ₃/Ŝ₂².
    pub rho: f64,
    /// ρ̂ = Ŝ₁²/Ŝ₂.
    pub rho_hat: f64,
}

/// `Ŝⱼ = (1/T)·Σᵢ sᵢʲ/(N_c·(N_c − sᵢ)^{j−1})` for j = 1, 2, 3.
pub fn schedule_moments(sizes: &[u64], n_c: u64) -> Result<ScheduleMoments> {
    if sizes.is_empty() {
        return Err(Error::Domain("schedule has no rounds".into()));
    }
    if let Some((i, &s)) = sizes.iter().enumerate().find(|&(_, &s)| s == 0 || s >= n_c) {
        return Err(Error::Domain(format!(
            "round {i}: sample size {s} must lie in (0, N_c = {n_c})"
        )));
    }
    let n = n_c as f64;
    let (mut a1, mut a2, mut a3) = (0.0, 0.0, 0.0);
    for &s in sizes {
        let s = s as f64;
        let rest = n - s;
        a1 += s / n;
        a2 += s * s / (n * rest);
        a3 += s * s * s / (n * rest * rest);
    }
    let t = sizes.len();
    let (s1, s2, s3) = (a1 / t as f64, a2 / t as f64, a3 / t as f64);
    Ok(ScheduleMoments {
        t,
        s1,
        s2,
        s3,
        rho: s1 * s3 / (s2 * s2),
        rho_hat: s1 * s1 / s2,
    })
}

/// Constants of the per-round moment bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lemma3Constants {
    pub u0: f64,
    pub u1: f64,
    pub r: f64,
}

/// `u₀ = 2√(r₀σ)/(σ−r₀)`, `u₁ = 2e√(r₀σ)/((σ−r₀)σ)`,
/// `r = 8r₀·(1/(1−u₀) + e³/(σ³(1−u₁)))·exp(3/σ²)`.
pub fn lemma3_r(r0: f64, sigma: f64) -> Result<Lemma3Constants> {
    if !(r0 > 0.0) {
        return Err(Error::Precondition(format!("r₀ > 0 fails: r₀ = {r0}")));
    }
    if !(sigma > r0) {
        return Err(Error::Precondition(format!("σ > r₀ fails: σ = {sigma}, r₀ = {r0}")));
    }
    let root = (r0 * sigma).sqrt();
    let u0 = 2.0 * root / (sigma - r0);
    let u1 = 2.0 * E * root / ((sigma - r0) * sigma);
    if u0 >= 1.0 {
        return Err(Error::Precondition(format!("u₀ < 1 fails: u₀ = {u0}")));
    }
    if u1 >= 1.0 {
        return Err(Error::Precondition(format!("u₁ < 1 fails: u₁ = {u1}")));
    }
    let r = r0 * 8.0 * (1.0 / (1.0 - u0) + E.powi(3) / (sigma.powi(3) * (1.0 - u1))) * (3.0 / (sigma * sigma)).exp();
    Ok(Lemma3Constants { u0, u1, r })
}

/// Largest admissible integer λ for one round: `⌊σ²·ln(N_c/(sσ))⌋`.
fn lambda_limit(s: u64, n_c: u64, sigma: f64) -> f64 {
    (sigma * sigma * (n_c as f64 / (s as f64 * sigma)).ln()).floor()
}

/// Per-round log-moment bound
/// `s²λ(λ+1)/(N(N−s)σ²) + (r/r₀)·s³λ²(λ+1)/(N(N−s)²σ³)`.
pub fn lemma3_moment_bound(s: u64, n_c: u64, sigma: f64, lambda: u32, r: f64, r0: f64) -> Result<f64> {
    if s as f64 / n_c as f64 > r0 / sigma {
        return Err(Error::Precondition(format!(
            "sampling rate s/N_c = {} exceeds r₀/σ = {}",
            s as f64 / n_c as f64,
            r0 / sigma
        )));
    }
    if lambda == 0 || f64::from(lambda) > lambda_limit(s, n_c, sigma) {
        return Err(Error::Precondition(format!(
            "λ = {lambda} outside [1, σ²·ln(N_c/(sσ))] = [1, {}]",
            lambda_limit(s, n_c, sigma)
        )));
    }
    Ok(moment_bound_unchecked(s, n_c, sigma, f64::from(lambda), r / r0))
}

fn moment_bound_unchecked(s: u64, n_c: u64, sigma: f64, lambda: f64, r_ratio: f64) -> f64 {
    let (s, n) = (s as f64, n_c as f64);
    let rest = n - s;
    s * s * lambda * (lambda + 1.0) / (n * rest * sigma * sigma)
        + r_ratio * s.powi(3) * lambda * lambda * (lambda + 1.0) / (n * rest * rest * sigma.powi(3))
}

/// Result of [`numeric_delta`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NumericDelta {
    pub delta: f64,
    pub lambda: u32,
    pub lambda_max: u32,
}

/// `min over λ ∈ [1, λ_max]` of `exp(Σᵢ boundᵢ(λ) − λε)`.
///
/// `λ_max` is the smallest per-round limit `⌊σ² ln(N_c/(sᵢσ))⌋`, further
/// capped at `⌊σ²⌋` (the range on which the constants u₀, u₁ inside r are
/// valid) and at [`LAMBDA_SEARCH_CAP`].
pub fn numeric_delta(sizes: &[u64], n_c: u64, sigma: f64, epsilon: f64, r: f64, r0: f64) -> Result<NumericDelta> {
    if sizes.is_empty() {
        return Err(Error::Domain("schedule has no rounds".into()));
    }
    if let Some((i, &s)) = sizes
        .iter()
        .enumerate()
        .find(|&(_, &s)| s == 0 || s as f64 / n_c as f64 > r0 / sigma)
    {
        return Err(Error::Precondition(format!(
            "round {i}: sampling rate {}/{n_c} violates 0 < s/N_c ≤ r₀/σ = {}",
            s,
            r0 / sigma
        )));
    }
    let per_round = sizes
        .iter()
        .map(|&s| lambda_limit(s, n_c, sigma))
        .fold(f64::INFINITY, f64::min);
    let lambda_max = per_round
        .min((sigma * sigma).floor())
        .min(f64::from(LAMBDA_SEARCH_CAP));
    if lambda_max < 1.0 {
        return Err(Error::Domain(format!(
            "admissible λ range is empty (λ_max = {lambda_max})"
        )));
    }
    let lambda_max = lambda_max as u32;
    let r_ratio = r / r0;
    let mut best = (f64::INFINITY, 0u32);
    for lambda in 1..=lambda_max {
        let l = f64::from(lambda);
        let total: f64 = sizes
            .iter()
            .map(|&s| moment_bound_unchecked(s, n_c, sigma, l, r_ratio))
            .sum();
        let exponent = total - l * epsilon;
        if exponent < best.0 {
            best = (exponent, lambda);
        }
    }
    Ok(NumericDelta {
        delta: best.0.exp(),
        lambda: best.1,
        lambda_max,
    })
}

/// `c(x) = min{(√(2rρx+1)−1)/(rρx), 2/(ρ̂x)}`.
pub fn c_function(x: f64, r: f64, rho: f64, rho_hat: f64) -> f64 {
    let y = r * rho * x;
    // (√(2y+1)−1)/y written without cancellation for small y.
    let first = 2.0 / ((2.0 * y + 1.0).sqrt() + 1.0);
    first.min(2.0 / (rho_hat * x))
}

/// Noise requirement of the closed-form accountant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaRequirement {
    pub sigma: f64,
    pub c0: f64,
    pub c1: f64,
}

/// `σ ≥ (2/√c₀)·√(Ŝ₂·T·ln(1/δ))/ε` with `c₁ = ε/(T·Ŝ₁²)`, `c₀ = c(c₁)`.
pub fn theorem3_sigma(moments: &ScheduleMoments, epsilon: f64, delta: f64, r: f64) -> Result<SigmaRequirement> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("ε must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("δ must lie in (0, 1), got {delta}")));
    }
    let t = moments.t as f64;
    let c1 = epsilon / (t * moments.s1 * moments.s1);
    let c0 = c_function(c1, r, moments.rho, moments.rho_hat).min(1.0);
    let sigma = 2.0 / c0.sqrt() * (moments.s2 * t * (1.0 / delta).ln()).sqrt() / epsilon;
    Ok(SigmaRequirement { sigma, c0, c1 })
}

/// Fixed point r₀(σ) of the printed iteration, started at r₀ = 0 and
/// stopped once successive iterates differ by less than 10⁻¹².
pub fn solve_r0(sigma: f64, p: f64) -> Result<f64> {
    if !(sigma >= SIGMA_MIN_FIXED_POINT) {
        return Err(Error::Domain(format!(
            "σ = {sigma} is below the admissibility threshold {SIGMA_MIN_FIXED_POINT}"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("p must lie in [0, 1], got {p}")));
    }
    let lead = (3f64.sqrt() - 1.0) / 2.0 * (3.0 * p + 1.0) / ((p + 1.0) * (2.0 * p + 1.0));
    let tail = E.powi(3) / sigma.powi(3);
    let growth = (3.0 / (sigma * sigma)).exp();
    let mut r0 = 0.0f64;
    for _ in 0..R0_MAX_ITERATIONS {
        let root = (r0 * sigma).sqrt();
        let gap = sigma - r0;
        let den0 = gap - 2.0 * root;
        let den1 = gap * sigma - 2.0 * E * root;
        if !(den0 > 0.0 && den1 > 0.0) {
            return Err(Error::NoConvergence(format!(
                "r₀ iteration left the admissible region at r₀ = {r0}"
            )));
        }
        let num = lead * (1.0 - r0 / sigma).powi(2);
        let den = 8.0 * (gap / den0 + gap * sigma / den1 * tail) * growth;
        let next = num / den;
        if (next - r0).abs() < R0_TOLERANCE {
            return Ok(next);
        }
        r0 = next;
    }
    Err(Error::NoConvergence(format!(
        "r₀ iteration did not settle within {R0_MAX_ITERATIONS} steps"
    )))
}

/// How the planner and regime bounds obtain r₀.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum R0Policy {
    /// r₀ = r₀(σ), closed-form A and B.
    FixedPoint,
    /// A user-chosen r₀, general forms of A and B with α = r₀/σ.
    Explicit(f64),
}

/// Threshold coefficients and the resulting K⁻, K⁺, K*.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegimeBounds {
    pub r0: f64,
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub k_minus: f64,
    pub k_plus: f64,
    pub k_star: f64,
}

/// `B = (1/(1+p))·((√3−1)/2·(2p+1))^{(1+p)/(1+2p)}`, valid at r₀ = r₀(σ).
pub fn b_fixed_point(p: f64) -> f64 {
    1.0 / (1.0 + p) * ((3f64.sqrt() - 1.0) / 2.0 * (2.0 * p + 1.0)).powf((1.0 + p) / (1.0 + 2.0 * p))
}

/// General (A, B) for arbitrary r₀ with α = r₀/σ.
pub fn ab_general(p: f64, r0: f64, sigma: f64, gamma: f64) -> Result<(f64, f64)> {
    let r = lemma3_r(r0, sigma)?.r;
    let alpha = r0 / sigma;
    let e = (1.0 + p) / (1.0 + 2.0 * p);
    let a = (p + 1.0).powf(-p / (1.0 + 2.0 * p))
        * (r * (2.0 * p + 1.0).powi(2) / (3.0 * p + 1.0) * (1.0 + gamma).powf(3.0 * (1.0 + 2.0 * p))
            / (1.0 - alpha).powi(2))
        .powf(e);
    let x = (p + 1.0) * (2.0 * p + 1.0) * (1.0 + gamma).powf(2.0 * p) / ((3.0 * p + 1.0) * (1.0 - alpha).powi(2));
    let b = a
        * (1.0 + gamma).powf(-(1.0 + p) * (3.0 + 4.0 * p) / (1.0 + 2.0 * p))
        * (2.0 / ((2.0 * r * x + 1.0).powi(2) - 1.0)).powf(e);
    Ok((a, b))
}

/// `D = (r₀/σ)^{(1+p)/p}/(p+1)·(1+γ)^{1+p}`; +∞ at p = 0.
pub fn d_coefficient(p: f64, r0: f64, sigma: f64, gamma: f64) -> f64 {
    if p == 0.0 {
        return f64::INFINITY;
    }
    (r0 / sigma).powf((1.0 + p) / p) / (p + 1.0) * (1.0 + gamma).powf(1.0 + p)
}

fn resolve_r0(policy: R0Policy, sigma: f64, p: f64) -> Result<f64> {
    match policy {
        R0Policy::FixedPoint => solve_r0(sigma, p),
        R0Policy::Explicit(r0) => {
            if !(r0 > 0.0 && r0 <= 1.0 / E) {
                return Err(Error::Domain(format!("r₀ must lie in (0, 1/e], got {r0}")));
            }
            Ok(r0)
        }
    }
}

fn a_and_b(policy: R0Policy, p: f64, r0: f64, sigma: f64, gamma: f64) -> Result<(f64, f64)> {
    match policy {
        R0Policy::FixedPoint => {
            let b = b_fixed_point(p);
            let a = b * (1.0 + gamma).powf((3.0 + 4.0 * p) * (1.0 + p) / (1.0 + 2.0 * p));
            Ok((a, b))
        }
        R0Policy::Explicit(_) => ab_general(p, r0, sigma, gamma),
    }
}

fn check_p_q(p: f64, q: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("p must lie in [0, 1], got {p}")));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("q must lie in (0, 1), got {q}")));
    }
    Ok(())
}

/// Computes A, B, D and the thresholds
/// `K⁻ = B·ε^{(1+p)/(1+2p)}·q^{−1/(1+2p)}·N_c`, `K⁺` likewise with A, and
/// `K* = D·q^{−1/p}·N_c`.
pub fn regime_bounds(
    p: f64,
    r0: R0Policy,
    sigma: f64,
    epsilon: f64,
    q: f64,
    n_c: f64,
    gamma: f64,
) -> Result<RegimeBounds> {
    check_p_q(p, q)?;
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("ε must be positive, got {epsilon}")));
    }
    let r0_value = resolve_r0(r0, sigma, p)?;
    let (a, b) = a_and_b(r0, p, r0_value, sigma, gamma)?;
    let d = d_coefficient(p, r0_value, sigma, gamma);
    let scale = epsilon.powf((1.0 + p) / (1.0 + 2.0 * p)) * q.powf(-1.0 / (1.0 + 2.0 * p)) * n_c;
    let k_star = if p == 0.0 {
        f64::INFINITY
    } else {
        d * q.powf(-1.0 / p) * n_c
    };
    Ok(RegimeBounds {
        r0: r0_value,
        a,
        b,
        d,
        k_minus: b * scale,
        k_plus: a * scale,
        k_star,
    })
}

/// Which side of the K⁻/K⁺ gap the planner targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlanCase {
    /// K ≤ K⁻.
    One,
    /// K ≥ K⁺, with K = k·K⁺.
    Two,
}

impl fmt::Display for PlanCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanCase::One => "1",
            PlanCase::Two => "2",
        })
    }
}

/// Inputs of [`plan_parameters`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanInputs {
    /// Initial per-client sample size s₀,c.
    pub s0c: f64,
    /// Client dataset size N_c.
    pub n_c: f64,
    /// Schedule exponent p ∈ (0, 1].
    pub p: f64,
    pub epsilon: f64,
    pub sigma: f64,
    /// Gradient-computation budget K of the client.
    pub k: f64,
    pub case: PlanCase,
    pub r0: R0Policy,
    /// Case-2 ratio K/K⁺.
    pub k_factor: f64,
    /// Optional δ the plan must reach; a weaker plan is reported infeasible.
    pub target_delta: Option<f64>,
}

impl PlanInputs {
    /// Case 1, fixed-point r₀, k = 1.5, no δ target.
    pub fn new(s0c: f64, n_c: f64, p: f64, epsilon: f64, sigma: f64, k: f64) -> Self {
        PlanInputs {
            s0c,
            n_c,
            p,
            epsilon,
            sigma,
            k,
            case: PlanCase::One,
            r0: R0Policy::FixedPoint,
            k_factor: 1.5,
            target_delta: None,
        }
    }
}

/// Output of the parameter-selection procedure.
#[derive(Clone, Debug, PartialEq)]
pub struct PrivacyPlan {
    pub inputs: PlanInputs,
    pub r0: f64,
    /// Lemma-3 constant r at (r₀, σ).
    pub r: f64,
    pub q: f64,
    pub m: f64,
    /// Round count `round(((p+1)K/(N_c q))^{1/(1+p)})`.
    pub t: u64,
    /// γ = m/T at convergence.
    pub gamma: f64,
    /// Achievable budget 𝔅 with δ = exp(−ε𝔅²/2).
    pub budget: f64,
    pub delta: f64,
    pub bounds: RegimeBounds,
    /// ĉ₁ = ε·N_c/(q·K).
    pub c_hat_1: f64,
    /// γ-iterations used.
    pub iterations: usize,
    /// Per-client sample sizes `⌈N_c·q·(i+m)^p⌉`, truncated where the total
    /// is closest to K.
    pub schedule: Vec<u64>,
    /// Whether every scheduled size satisfies s/N_c ≤ r₀/σ.
    pub sampling_rate_ok: bool,
    /// Rounds of the constant-s₀,c baseline, ⌈K/s₀,c⌉.
    pub t_const: u64,
    /// T/T_const.
    pub reduction: f64,
    /// √T·σ.
    pub aggregated_noise: f64,
    /// √T_const·𝔅, the constant schedule at the same δ.
    pub baseline_noise: f64,
}

/// Ceiling that ignores relative rounding noise below 10⁻¹², so that
/// `N_c·q·m^p = s₀,c` maps to s₀,c rather than s₀,c + 1.
fn ceil_robust(x: f64) -> u64 {
    let snapped = x.round();
    if (x - snapped).abs() <= 1e-12 * x.abs().max(1.0) {
        snapped.max(1.0) as u64
    } else {
        x.ceil().max(1.0) as u64
    }
}

/// Builds `s_{i,c} = ⌈N_c·q·(i+m)^p⌉` up to the length whose total is
/// closest to `k`.
pub fn plan_schedule(n_c: f64, q: f64, m: f64, p: f64, k: f64) -> Vec<u64> {
    let mut sizes = Vec::new();
    let mut total = 0.0f64;
    loop {
        let s = ceil_robust(n_c * q * (sizes.len() as f64 + m).powf(p));
        let next = total + s as f64;
        if next >= k {
            if next - k <= k - total || sizes.is_empty() {
                sizes.push(s);
            }
            return sizes;
        }
        total = next;
        sizes.push(s);
    }
}

/// Runs the γ-iteration of the parameter-selection procedure.
pub fn plan_parameters(inputs: PlanInputs) -> Result<PrivacyPlan> {
    let PlanInputs {
        s0c,
        n_c,
        p,
        epsilon,
        sigma,
        k,
        case,
        r0: policy,
        k_factor,
        target_delta,
    } = inputs;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(format!("planner needs p ∈ (0, 1], got {p}")));
    }
    if !(s0c >= 1.0 && n_c > s0c && k >= s0c && epsilon > 0.0 && sigma > 0.0) {
        return Err(Error::Domain(format!(
            "invalid planner inputs: s0c = {s0c}, N_c = {n_c}, K = {k}, ε = {epsilon}, σ = {sigma}"
        )));
    }
    if case == PlanCase::Two && !(k_factor >= 1.0) {
        return Err(Error::Domain(format!("case-2 factor k must be ≥ 1, got {k_factor}")));
    }
    let r0 = resolve_r0(policy, sigma, p)?;
    let r = lemma3_r(r0, sigma)?.r;
    let alpha = r0 / sigma;
    let eps_pow = epsilon.powf((1.0 + p) / (1.0 + 2.0 * p));
    // The K* cap on q uses D at γ = 0.
    let d0 = d_coefficient(p, r0, sigma, 0.0);
    let q_star = (d0 * n_c / k).powf(p);

    let mut gamma = 0.0f64;
    let mut state = None;
    for iteration in 1..=PLANNER_MAX_ITERATIONS {
        let (a, b) = a_and_b(policy, p, r0, sigma, gamma)?;
        let q_regime = match case {
            PlanCase::One => (b * eps_pow * n_c / k).powf(1.0 + 2.0 * p),
            PlanCase::Two => (k_factor * a * eps_pow * n_c / k).powf(1.0 + 2.0 * p),
        };
        let q = q_regime.min(q_star);
        let m = (s0c / (n_c * q)).powf(1.0 / p);
        let t = (((p + 1.0) * k / (n_c * q)).powf(1.0 / (1.0 + p))).round().max(1.0);
        let next = m / t;
        let done = (next - gamma).abs() < GAMMA_TOLERANCE;
        gamma = next;
        if done {
            state = Some((iteration, q, m, t as u64));
            break;
        }
    }
    let (iterations, q, m, t) = state.ok_or_else(|| {
        Error::NoConvergence(format!(
            "γ = m/T did not settle within {PLANNER_MAX_ITERATIONS} iterations"
        ))
    })?;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("planner produced sampling rate q = {q} outside (0, 1)")));
    }

    let bounds = regime_bounds(p, policy, sigma, epsilon, q, n_c, gamma)?;
    let budget = match (case, policy) {
        (PlanCase::One, _) => sigma * (1.0 - alpha).sqrt() / (1.0 + gamma).powf(2.0 + 3.0 * p),
        (PlanCase::Two, R0Policy::FixedPoint) => {
            sigma * (1.0 - alpha).sqrt()
                / ((k / bounds.k_plus).powf((1.0 + 2.0 * p) / (2.0 + 2.0 * p))
                    * REGIME_JUMP
                    * (1.0 + gamma).powf(2.0 + 3.0 * p))
        }
        (PlanCase::Two, R0Policy::Explicit(_)) => {
            sigma
                / ((k / bounds.k_plus).powf((1.0 + 2.0 * p) / (2.0 + 2.0 * p)) * 2.0
                    / (1.0 - alpha).powf(1.5)
                    * (r * (p + 1.0) * (2.0 * p + 1.0) / (3.0 * p + 1.0)).sqrt()
                    * (1.0 + gamma).powf(2.0 * (1.0 + 2.0 * p)))
        }
    };
    // q is set from bounds at the previous γ iterate, so K sits on the
    // regime boundary only up to the γ tolerance.
    let slack = 1e-6 * k;
    match case {
        PlanCase::One if k > bounds.k_minus + slack => {
            return Err(Error::Precondition(format!(
                "case 1 needs K ≤ K⁻, but K = {k} > K⁻ = {}",
                bounds.k_minus
            )))
        }
        PlanCase::Two if k < bounds.k_plus - slack => {
            return Err(Error::Precondition(format!(
                "case 2 needs K ≥ K⁺, but K = {k} < K⁺ = {}; the K* cap binds, try case 1",
                bounds.k_plus
            )))
        }
        _ => {}
    }
    let delta = (-epsilon * budget * budget / 2.0).exp();
    if let Some(target) = target_delta {
        if delta > target {
            let needed = sigma * ((2.0 * (1.0 / target).ln() / epsilon).sqrt() / budget);
            return Err(Error::Precondition(format!(
                "plan reaches δ = {delta:.6e} > target {target:.6e}; increase σ to at least {needed:.6}"
            )));
        }
    }

    let schedule = plan_schedule(n_c, q, m, p, k);
    let sampling_rate_ok = schedule.iter().all(|&s| s as f64 / n_c <= alpha);
    let t_const = (k / s0c).ceil() as u64;
    Ok(PrivacyPlan {
        inputs,
        r0,
        r,
        q,
        m,
        t,
        gamma,
        budget,
        delta,
        bounds,
        c_hat_1: epsilon * n_c / (q * k),
        iterations,
        schedule,
        sampling_rate_ok,
        t_const,
        reduction: t as f64 / t_const as f64,
        aggregated_noise: (t as f64).sqrt() * sigma,
        baseline_noise: (t_const as f64).sqrt() * budget,
    })
}
