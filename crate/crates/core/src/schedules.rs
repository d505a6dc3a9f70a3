//! Delay functions, increasing sample-size sequences and diminishing round
//! step sizes.
//!
//! A [`SampleSchedule`] is materialized for a finite number of rounds with
//! exact integer prefix sums computed at construction. Step sizes are
//! produced per round from a [`StepSchedule`] and the sample schedule, and
//! the pair (sample schedule, [`DelayFunction`]) is checked for the
//! compatibility condition `τ(Σ_{j≤i} s_j) ≥ Σ_{j=i−d}^{i} s_j` by
//! [`check_eq4`].

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Number of log-spaced points used when validating a growth function.
const GAMMA_GRID_POINTS: usize = 256;

/// Hard upper bound on the number of rounds a schedule may be materialized
/// for; protects against budgets that a slowly growing sequence would need
/// millions of rounds to cover.
pub const MAX_ROUNDS: usize = 10_000_000;

/// Growth function γ(z) used by the delay function `τ(x) = M₁ + ((x+M₀)/γ(x+M₀))^{1/g}`.
#[derive(Clone)]
pub enum Gamma {
    /// γ(z) = 4 ln z, the strong-convex instantiation.
    FourLn,
    /// γ(z) = c for all z.
    Constant(f64),
    /// Arbitrary user-supplied function.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gamma::FourLn => f.write_str("FourLn"),
            Gamma::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            Gamma::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Gamma {
    /// Evaluates γ(z). Errors when the logarithmic form is evaluated at
    /// `z ≤ 1`, where it is not positive.
    pub fn eval(&self, z: f64) -> Result<f64> {
        match self {
            Gamma::FourLn => {
                if z <= 1.0 {
                    return Err(Error::Domain(format!(
                        "4·ln(z) requires z > 1, got z = {z}"
                    )));
                }
                Ok(4.0 * z.ln())
            }
            Gamma::Constant(c) => Ok(*c),
            Gamma::Custom(f) => Ok(f(z)),
        }
    }

    /// Numerically checks on a logarithmic grid over `[z_lo, z_hi]` that γ is
    /// non-decreasing, at least 1, and satisfies `γ(z) ≥ z·γ'(z)·g/(g−1)`.
    pub fn validate(&self, g: f64, z_lo: f64, z_hi: f64) -> Result<()> {
        if !(g > 1.0) {
            return Err(Error::Domain(format!("g must exceed 1, got {g}")));
        }
        if !(z_lo > 0.0 && z_hi >= z_lo) {
            return Err(Error::Domain(format!(
                "invalid validation interval [{z_lo}, {z_hi}]"
            )));
        }
        let ratio = (z_hi / z_lo).ln();
        let mut prev: Option<(f64, f64)> = None;
        for k in 0..GAMMA_GRID_POINTS {
            let z = z_lo * (ratio * k as f64 / (GAMMA_GRID_POINTS - 1) as f64).exp();
            let value = self.eval(z)?;
            if value < 1.0 {
                return Err(Error::Precondition(format!(
                    "γ({z}) = {value} is below 1"
                )));
            }
            if let Some((pz, pv)) = prev {
                if value < pv * (1.0 - 1e-12) {
                    return Err(Error::Precondition(format!(
                        "γ decreases between z = {pz} and z = {z}"
                    )));
                }
            }
            let h = 1e-6 * z;
            let derivative = (self.eval(z + h)? - self.eval(z - h)?) / (2.0 * h);
            let rhs = z * derivative * g / (g - 1.0);
            if value < rhs * (1.0 - 1e-9) {
                return Err(Error::Precondition(format!(
                    "growth condition γ(z) ≥ z·γ'(z)·g/(g−1) fails at z = {z}: {value} < {rhs}"
                )));
            }
            prev = Some((z, value));
        }
        Ok(())
    }
}

/// Delay function τ(t): the permitted staleness of the model used at global
/// iteration t.
#[derive(Clone, Debug)]
pub enum DelayFunction {
    /// `τ(t) = M₁ + ((t+M₀)/γ(t+M₀))^{1/g}`.
    Power {
        m0: f64,
        m1: f64,
        g: f64,
        gamma: Gamma,
    },
    /// `τ(t) = M₁ + slope·t` with `slope ∈ [0, 1]`; slope 0 is a constant delay.
    Affine { m1: f64, slope: f64 },
    /// Explicit values for `t = 0, 1, …, len−1`.
    Table(Vec<f64>),
    /// τ ≡ ∞: the gate never closes.
    Unbounded,
}

impl DelayFunction {
    /// The sqrt-log delay `τ(t) = M₁ + √((t+M₀)/(4 ln(t+M₀)))`.
    pub fn sqrt_log(m0: f64, m1: f64) -> Self {
        DelayFunction::Power {
            m0,
            m1,
            g: 2.0,
            gamma: Gamma::FourLn,
        }
    }

    /// The delay paired with [`SampleKind::Theorem5`]: `M₀ = (m+1)²/4` and
    /// `M₁ = max{d+1, extra, ½⌈(m+1)/(16(d+1)²)/ln((m+1)/(2(d+1)))⌉}`.
    ///
    /// `extra` carries the optional `2Lα/μ` term; pass 0 to omit it.
    pub fn theorem5(d: u32, m: f64, extra: f64) -> Result<Self> {
        let d1 = f64::from(d) + 1.0;
        let arg = (m + 1.0) / (2.0 * d1);
        if arg <= 1.0 {
            return Err(Error::Domain(format!(
                "(m+1)/(2(d+1)) must exceed 1, got {arg}"
            )));
        }
        let half_ceil = 0.5 * ((m + 1.0) / (16.0 * d1 * d1) / arg.ln()).ceil();
        let m1 = d1.max(extra).max(half_ceil);
        Ok(Self::sqrt_log((m + 1.0).powi(2) / 4.0, m1))
    }

    /// The delay paired with [`SampleKind::Lemma4`]: `M₀ = ((m+1)(g−1)/g)^{g/(g−1)}`
    /// and `M₁ = d+1`.
    pub fn lemma4(gamma: Gamma, g: f64, d: u32, m: f64) -> Self {
        let m0 = ((m + 1.0) * (g - 1.0) / g).powf(g / (g - 1.0));
        DelayFunction::Power {
            m0,
            m1: f64::from(d) + 1.0,
            g,
            gamma,
        }
    }

    /// The staleness a round-lag gate with lag `d` guarantees on `samples`:
    /// a step of round i sees every update of rounds below `i − d`, so
    /// `τ(t) = t − Σ_{j<i−d} s_j` for `i ≥ d` and `τ(t) = t + 1` before that.
    pub fn round_lag(samples: &SampleSchedule, d: u32) -> Self {
        let mut values = Vec::with_capacity(samples.total() as usize);
        for i in 0..samples.rounds() {
            for t in samples.prefix(i)..samples.cumulative(i) {
                let tau = match i.checked_sub(d as usize) {
                    Some(first) => t - samples.prefix(first),
                    None => t + 1,
                };
                values.push(tau as f64);
            }
        }
        DelayFunction::Table(values)
    }

    /// Evaluates τ(t).
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("τ requires t ≥ 0, got {t}")));
        }
        match self {
            DelayFunction::Power { m0, m1, g, gamma } => {
                let z = t + m0;
                let gz = gamma.eval(z)?;
                if !(gz > 0.0) {
                    return Err(Error::Domain(format!("γ({z}) = {gz} is not positive")));
                }
                Ok(m1 + (z / gz).powf(1.0 / g))
            }
            DelayFunction::Affine { m1, slope } => Ok(m1 + slope * t),
            DelayFunction::Table(values) => {
                let idx = t as usize;
                values.get(idx).copied().ok_or_else(|| {
                    Error::Domain(format!(
                        "delay table has {} entries, queried t = {t}",
                        values.len()
                    ))
                })
            }
            DelayFunction::Unbounded => Ok(f64::INFINITY),
        }
    }

    /// Checks that τ(t) ≥ 0 and that t − τ(t) is non-decreasing at the given
    /// sample points (which must be sorted ascending). Returns the first
    /// offending point.
    pub fn validate_at(&self, points: &[f64]) -> Result<()> {
        let mut prev: Option<(f64, f64)> = None;
        for &t in points {
            let tau = self.eval(t)?;
            if tau < 0.0 {
                return Err(Error::Precondition(format!("τ({t}) = {tau} is negative")));
            }
            if tau.is_finite() {
                let lag = t - tau;
                if let Some((pt, plag)) = prev {
                    if lag < plag - 1e-9 * plag.abs().max(1.0) {
                        return Err(Error::Precondition(format!(
                            "t − τ(t) decreases between t = {pt} and t = {t}"
                        )));
                    }
                }
                prev = Some((t, lag));
            }
        }
        Ok(())
    }
}

/// Generator of the global sample-size sequence {sᵢ}.
#[derive(Clone, Debug)]
pub enum SampleKind {
    /// `sᵢ = ⌈(m+i+1)/(16(d+1)²) / ln((m+i+1)/(2(d+1)))⌉`.
    Theorem5 { d: u32, m: f64 },
    /// `sᵢ = ⌈S((m+i+1)/(d+1))/(d+1)⌉` for a general growth function γ.
    Lemma4 { gamma: Gamma, g: f64, d: u32, m: f64 },
    /// `sᵢ = ⌈a·iᶜ + b⌉` with `s₀ = max(1, ⌈b⌉)`.
    PowerLaw { a: f64, b: f64, c: f64 },
    /// `sᵢ = ⌈a·i + b⌉` with `s₀ = max(1, ⌈b⌉)`.
    Linear { a: f64, b: f64 },
    /// `sᵢ = s`.
    Constant { s: u64 },
    /// Explicit sizes, for example a schedule emitted by the privacy planner.
    Table(Vec<u64>),
}

/// Evaluates the Theorem-5 sample size for round `i`.
pub fn theorem5_sample_sequence(d: u32, m: f64, i: u64) -> Result<u64> {
    let d1 = f64::from(d) + 1.0;
    let x = m + i as f64 + 1.0;
    let arg = x / (2.0 * d1);
    if arg <= 1.0 {
        return Err(Error::Domain(format!(
            "log argument (m+i+1)/(2(d+1)) = {arg} must exceed 1"
        )));
    }
    Ok(ceil_size(x / (16.0 * d1 * d1) / arg.ln()))
}

/// Evaluates the Lemma-4 sample size for round `i`:
/// `S(x) = (x/ω(x)·(g−1)/g)^{1/(g−1)}`, `ω(x) = γ((x(g−1)/g)^{g/(g−1)})`.
///
/// The growth conditions on γ are not checked here; see [`Gamma::validate`]
/// and [`SampleSchedule::with_rounds`], which validates them over the whole
/// materialized range.
pub fn lemma4_sample_sequence(gamma: &Gamma, g: f64, d: u32, m: f64, i: u64) -> Result<u64> {
    if !(g > 1.0) {
        return Err(Error::Domain(format!("g must exceed 1, got {g}")));
    }
    let d1 = f64::from(d) + 1.0;
    let x = (m + i as f64 + 1.0) / d1;
    let omega = gamma.eval(lemma4_gamma_arg(x, g))?;
    if !(omega > 0.0) {
        return Err(Error::Domain(format!("ω({x}) = {omega} is not positive")));
    }
    let s = (x / omega * (g - 1.0) / g).powf(1.0 / (g - 1.0));
    Ok(ceil_size(s / d1))
}

fn lemma4_gamma_arg(x: f64, g: f64) -> f64 {
    (x * (g - 1.0) / g).powf(g / (g - 1.0))
}

fn ceil_size(x: f64) -> u64 {
    (x.ceil() as u64).max(1)
}

impl SampleKind {
    /// Size of round `i` under this generator.
    pub fn size(&self, i: u64) -> Result<u64> {
        match self {
            SampleKind::Theorem5 { d, m } => theorem5_sample_sequence(*d, *m, i),
            SampleKind::Lemma4 { gamma, g, d, m } => lemma4_sample_sequence(gamma, *g, *d, *m, i),
            SampleKind::PowerLaw { a, b, c } => Ok(power_law(*a, *b, *c, i)),
            SampleKind::Linear { a, b } => Ok(power_law(*a, *b, 1.0, i)),
            SampleKind::Constant { s } => {
                if *s == 0 {
                    Err(Error::Domain("constant sample size must be at least 1".into()))
                } else {
                    Ok(*s)
                }
            }
            SampleKind::Table(sizes) => sizes.get(i as usize).copied().ok_or_else(|| {
                Error::Domain(format!(
                    "sample table has {} rounds, queried round {i}",
                    sizes.len()
                ))
            }),
        }
    }

    /// Whether the generator promises a non-decreasing sequence.
    pub fn is_increasing_kind(&self) -> bool {
        !matches!(self, SampleKind::Constant { .. } | SampleKind::Table(_))
    }
}

fn power_law(a: f64, b: f64, c: f64, i: u64) -> u64 {
    if i == 0 {
        ceil_size(b)
    } else {
        ceil_size(a * (i as f64).powf(c) + b)
    }
}

/// A sample-size sequence materialized for a fixed number of rounds.
#[derive(Clone, Debug)]
pub struct SampleSchedule {
    kind: SampleKind,
    sizes: Vec<u64>,
    /// `prefix[i] = Σ_{j<i} s_j`; one entry longer than `sizes`.
    prefix: Vec<u64>,
}

impl SampleSchedule {
    /// Materializes rounds `0..rounds`.
    pub fn with_rounds(kind: SampleKind, rounds: usize) -> Result<Self> {
        if rounds > MAX_ROUNDS {
            return Err(Error::Domain(format!(
                "{rounds} rounds exceeds the limit of {MAX_ROUNDS}"
            )));
        }
        let sizes = (0..rounds as u64)
            .map(|i| kind.size(i))
            .collect::<Result<Vec<_>>>()?;
        let schedule = Self::from_parts(kind, sizes);
        schedule.validate_growth()?;
        Ok(schedule)
    }

    /// Materializes the fewest rounds whose sizes sum to at least `budget`.
    pub fn covering(kind: SampleKind, budget: u64) -> Result<Self> {
        let mut sizes = Vec::new();
        let mut total = 0u64;
        while total < budget {
            if sizes.len() >= MAX_ROUNDS {
                return Err(Error::Domain(format!(
                    "budget {budget} needs more than {MAX_ROUNDS} rounds"
                )));
            }
            let s = kind.size(sizes.len() as u64)?;
            total += s;
            sizes.push(s);
        }
        let schedule = Self::from_parts(kind, sizes);
        schedule.validate_growth()?;
        Ok(schedule)
    }

    /// Wraps explicit sizes; every size must be at least 1.
    pub fn from_sizes(sizes: Vec<u64>) -> Result<Self> {
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Domain(format!("round {i} has sample size 0")));
        }
        Ok(Self::from_parts(SampleKind::Table(sizes.clone()), sizes))
    }

    fn from_parts(kind: SampleKind, sizes: Vec<u64>) -> Self {
        let mut prefix = Vec::with_capacity(sizes.len() + 1);
        prefix.push(0);
        let mut acc = 0u64;
        for &s in &sizes {
            acc += s;
            prefix.push(acc);
        }
        SampleSchedule {
            kind,
            sizes,
            prefix,
        }
    }

    fn validate_growth(&self) -> Result<()> {
        if let SampleKind::Lemma4 { gamma, g, d, m } = &self.kind {
            if self.sizes.is_empty() {
                return Ok(());
            }
            let d1 = f64::from(*d) + 1.0;
            let x_lo = (m + 1.0) / d1;
            let x_hi = (m + self.sizes.len() as f64) / d1;
            let tau = DelayFunction::lemma4(gamma.clone(), *g, *d, *m);
            let DelayFunction::Power { m0, .. } = tau else {
                unreachable!("lemma4 delay is a power form")
            };
            let z_lo = lemma4_gamma_arg(x_lo, *g).min(m0);
            let z_hi = lemma4_gamma_arg(x_hi, *g).max(m0 + self.total() as f64);
            gamma.validate(*g, z_lo, z_hi)?;
        }
        Ok(())
    }

    pub fn kind(&self) -> &SampleKind {
        &self.kind
    }

    /// Number of materialized rounds.
    pub fn rounds(&self) -> usize {
        self.sizes.len()
    }

    /// `sᵢ`.
    pub fn size(&self, i: usize) -> u64 {
        self.sizes[i]
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    /// `Σ_{j<i} s_j`, defined for `i ≤ rounds()`.
    pub fn prefix(&self, i: usize) -> u64 {
        self.prefix[i]
    }

    /// `Σ_{j≤i} s_j`.
    pub fn cumulative(&self, i: usize) -> u64 {
        self.prefix[i + 1]
    }

    /// Sum over all materialized rounds.
    pub fn total(&self) -> u64 {
        *self.prefix.last().expect("prefix has a leading zero")
    }

    /// Round containing global iteration `t`, if `t < total()`.
    pub fn round_of(&self, t: u64) -> Option<usize> {
        if t >= self.total() {
            return None;
        }
        Some(self.prefix.partition_point(|&p| p <= t) - 1)
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.sizes.windows(2).all(|w| w[0] <= w[1])
    }
}

/// The offset sequence Eₜ used by the round step-size construction.
#[derive(Clone, Debug)]
pub enum Offset {
    /// Eₜ = E₀ for all t.
    Constant(f64),
    /// Eₜ = factor·τ(t); the strong-convex construction uses factor 2.
    ScaledDelay { factor: f64, delay: DelayFunction },
}

impl Offset {
    pub fn eval(&self, t: f64) -> Result<f64> {
        match self {
            Offset::Constant(e) => Ok(*e),
            Offset::ScaledDelay { factor, delay } => Ok(factor * delay.eval(t)?),
        }
    }
}

/// Step-size generator: per-iteration ηₜ and per-round η̄ᵢ.
#[derive(Clone, Debug)]
pub enum StepSchedule {
    /// η̄ᵢ = ηₜ = η.
    Constant { eta: f64 },
    /// ηₜ = η₀/(1+β·t), held constant within a round at its value for the
    /// round's first iteration.
    InverseLinear { eta0: f64, beta: f64 },
    /// ηₜ = η₀/(1+β·√t), held constant within a round likewise.
    InverseSqrt { eta0: f64, beta: f64 },
    /// η̄ᵢ = a₀/((Σ_{j<i} s_j) + Ē_{i−1})^q with Ēᵢ = E_{Σ_{j≤i} s_j}, Ē₋₁ = E₀.
    RoundDiminishing { a0: f64, q: f64, offset: Offset },
}

impl StepSchedule {
    /// The strong-convex round step sizes: a₀ = 12/μ, q = 1, Eₜ = 2τ(t) with
    /// the delay paired with [`SampleKind::Theorem5`].
    pub fn theorem5(mu: f64, delay: DelayFunction) -> Self {
        StepSchedule::RoundDiminishing {
            a0: 12.0 / mu,
            q: 1.0,
            offset: Offset::ScaledDelay { factor: 2.0, delay },
        }
    }

    /// Per-iteration step size for iteration-indexed kinds; `None` for the
    /// round-indexed construction.
    pub fn iteration_step(&self, t: u64) -> Option<f64> {
        let t = t as f64;
        match self {
            StepSchedule::Constant { eta } => Some(*eta),
            StepSchedule::InverseLinear { eta0, beta } => Some(eta0 / (1.0 + beta * t)),
            StepSchedule::InverseSqrt { eta0, beta } => Some(eta0 / (1.0 + beta * t.sqrt())),
            StepSchedule::RoundDiminishing { .. } => None,
        }
    }

    /// η̄ᵢ for round `i` of `samples`.
    pub fn round_step(&self, samples: &SampleSchedule, i: usize) -> Result<f64> {
        match self {
            StepSchedule::RoundDiminishing { a0, q, offset } => {
                lemma5_round_steps(samples, *a0, *q, offset, i)
            }
            _ => Ok(self
                .iteration_step(samples.prefix(i))
                .expect("iteration-indexed kind")),
        }
    }

    /// η̄ᵢ for every materialized round.
    pub fn round_steps(&self, samples: &SampleSchedule) -> Result<Vec<f64>> {
        (0..samples.rounds())
            .map(|i| self.round_step(samples, i))
            .collect()
    }

    /// Checks positivity of every produced step size.
    pub fn validate(&self, samples: &SampleSchedule) -> Result<()> {
        for i in 0..samples.rounds() {
            let eta = self.round_step(samples, i)?;
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::Domain(format!("η̄_{i} = {eta} is not a positive real")));
            }
        }
        Ok(())
    }
}

/// `Ēᵢ = E_{Σ_{j≤i} s_j}` with `Ē₋₁ = E₀`.
fn e_bar(samples: &SampleSchedule, offset: &Offset, i: Option<usize>) -> Result<f64> {
    match i {
        None => offset.eval(0.0),
        Some(i) => offset.eval(samples.cumulative(i) as f64),
    }
}

/// Round step size `η̄ᵢ = a₀/((Σ_{j<i} s_j) + Ē_{i−1})^q`.
pub fn lemma5_round_steps(
    samples: &SampleSchedule,
    a0: f64,
    q: f64,
    offset: &Offset,
    i: usize,
) -> Result<f64> {
    if i >= samples.rounds() {
        return Err(Error::Domain(format!(
            "round {i} is beyond the {} materialized rounds",
            samples.rounds()
        )));
    }
    let e_prev = e_bar(samples, offset, i.checked_sub(1))?;
    let denom = samples.prefix(i) as f64 + e_prev;
    if !(denom > 0.0) {
        return Err(Error::Domain(format!(
            "denominator Σ_{{j<{i}}} s_j + Ē_{{{}}} = {denom} is not positive",
            i as i64 - 1
        )));
    }
    Ok(a0 / denom.powf(q))
}

/// Checks `s₀ − 1 ≤ E₀` and `Ēᵢ ≤ 2·Ē_{i−1}` for every materialized round;
/// the error names the failing inequality and round.
pub fn validate_lemma5(samples: &SampleSchedule, offset: &Offset) -> Result<()> {
    if samples.rounds() == 0 {
        return Ok(());
    }
    let e0 = offset.eval(0.0)?;
    if samples.size(0) as f64 - 1.0 > e0 {
        return Err(Error::Precondition(format!(
            "s₀ − 1 ≤ E₀ fails: s₀ = {}, E₀ = {e0}",
            samples.size(0)
        )));
    }
    let mut prev = e0;
    for i in 0..samples.rounds() {
        let cur = e_bar(samples, offset, Some(i))?;
        if cur > 2.0 * prev {
            return Err(Error::Precondition(format!(
                "Ē_i ≤ 2·Ē_(i−1) fails at i = {i}: {cur} > 2·{prev}"
            )));
        }
        prev = cur;
    }
    Ok(())
}

/// Implied per-iteration coefficient `αₜ = η̄ᵢ·(t + Eₜ)^q` for iteration `t`
/// of the round step schedule.
pub fn lemma5_alpha(
    samples: &SampleSchedule,
    a0: f64,
    q: f64,
    offset: &Offset,
    t: u64,
) -> Result<f64> {
    let i = samples
        .round_of(t)
        .ok_or_else(|| Error::Domain(format!("iteration {t} is beyond the schedule")))?;
    let eta = lemma5_round_steps(samples, a0, q, offset, i)?;
    Ok(eta * (t as f64 + offset.eval(t as f64)?).powf(q))
}

/// Upper bound a₁ on αₜ: `a₀·max{3, 1 + ((m+2)/(m+1))^{1/(g−1)}}^q`.
pub fn lemma5_alpha_upper(a0: f64, q: f64, m: f64, g: f64) -> f64 {
    let later_rounds = 1.0 + ((m + 2.0) / (m + 1.0)).powf(1.0 / (g - 1.0));
    a0 * later_rounds.max(3.0).powf(q)
}

/// First round at which the compatibility condition fails.
#[derive(Clone, Debug, PartialEq)]
pub struct Eq4Violation {
    pub round: usize,
    /// τ(Σ_{j≤i} s_j).
    pub delay: f64,
    /// Σ_{j=i−d}^{i} s_j.
    pub window: u64,
}

/// Result of [`check_eq4`].
#[derive(Clone, Debug, PartialEq)]
pub struct Eq4Report {
    pub d: u32,
    pub i_max: usize,
    pub violation: Option<Eq4Violation>,
}

impl Eq4Report {
    pub fn holds(&self) -> bool {
        self.violation.is_none()
    }
}

impl fmt::Display for Eq4Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let first = self.d as usize + 1;
        match &self.violation {
            None => write!(
                f,
                "compatible: τ(Σ_(j≤i) s_j) ≥ Σ_(j=i−{d})^i s_j for all i in [{first}, {}]",
                self.i_max,
                d = self.d
            ),
            Some(v) => write!(
                f,
                "violated at round {}: τ = {:.15e} < window sum {} (d = {})",
                v.round, v.delay, v.window, self.d
            ),
        }
    }
}

/// Checks `τ(Σ_{j=0}^{i} s_j) ≥ Σ_{j=i−d}^{i} s_j` for every
/// `i ∈ [d+1, i_max]` and reports the first violation.
pub fn check_eq4(
    samples: &SampleSchedule,
    delay: &DelayFunction,
    d: u32,
    i_max: usize,
) -> Result<Eq4Report> {
    let first = d as usize + 1;
    if i_max < first {
        return Err(Error::Domain(format!("i_max = {i_max} must be at least d+1 = {first}")));
    }
    if i_max >= samples.rounds() {
        return Err(Error::Domain(format!(
            "i_max = {i_max} needs {} rounds, schedule has {}",
            i_max + 1,
            samples.rounds()
        )));
    }
    for i in first..=i_max {
        let tau = delay.eval(samples.cumulative(i) as f64)?;
        let window = samples.cumulative(i) - samples.prefix(i - d as usize);
        if tau < window as f64 {
            return Ok(Eq4Report {
                d,
                i_max,
                violation: Some(Eq4Violation {
                    round: i,
                    delay: tau,
                    window,
                }),
            });
        }
    }
    Ok(Eq4Report {
        d,
        i_max,
        violation: None,
    })
}

/// Largest constant sample size compatible with a constant step η:
/// `⌊1/(η·μ·(d+1))⌋`.
pub fn constant_step_sample_cap(eta: f64, mu: f64, d: u32) -> Result<u64> {
    if !(eta > 0.0) || !(mu > 0.0) {
        return Err(Error::Domain(format!(
            "η and μ must be positive, got η = {eta}, μ = {mu}"
        )));
    }
    let cap = (1.0 / (eta * mu * (f64::from(d) + 1.0))).floor();
    if cap < 1.0 {
        return Err(Error::Domain(format!(
            "η·μ·(d+1) = {} admits no positive sample size",
            eta * mu * (f64::from(d) + 1.0)
        )));
    }
    Ok(cap as u64)
}
