//! Logistic-regression objective, per-sample gradients, gradient clipping,
//! LIBSVM ingestion and accuracy.
//!
//! Labels are stored as 0/1. The bias is an appended always-1 feature at
//! index `dimension`, excluded from the ℓ₂ regularizer.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Sigmoid outputs are clamped to `[PROB_FLOOR, 1 − PROB_FLOOR]` before the
/// logarithm in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Relative slack under which [`clip`] leaves a vector untouched, so that a
/// vector produced by clipping is a fixed point of clipping.
const CLIP_SLACK: f64 = 1e-12;

/// Dense real-valued weight vector.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelVector(pub Vec<f64>);

impl ModelVector {
    pub fn zeros(len: usize) -> Self {
        ModelVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `self ← self + a·x`.
    pub fn axpy(&mut self, a: f64, x: &ModelVector) {
        debug_assert_eq!(self.len(), x.len());
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += a * v;
        }
    }

    /// `self ← self − a·x`.
    pub fn sub_scaled(&mut self, a: f64, x: &ModelVector) {
        debug_assert_eq!(self.len(), x.len());
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s -= a * v;
        }
    }

    /// `self ← self + x`.
    pub fn add_assign(&mut self, x: &ModelVector) {
        debug_assert_eq!(self.len(), x.len());
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for s in &mut self.0 {
            *s *= a;
        }
    }
}

/// One training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    /// Sparse features as (0-based index, value).
    pub features: Vec<(u32, f64)>,
    /// 0 or 1.
    pub label: u8,
}

/// A set of samples sharing one feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    dimension: usize,
}

impl Dataset {
    /// Builds a dataset, checking feature indices and labels.
    pub fn new(examples: Vec<Example>, dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Domain("dataset dimension must be positive".into()));
        }
        for (n, ex) in examples.iter().enumerate() {
            if ex.label > 1 {
                return Err(Error::Domain(format!("example {n} has label {}", ex.label)));
            }
            if let Some(&(idx, _)) = ex.features.iter().find(|(idx, _)| *idx as usize >= dimension) {
                return Err(Error::Domain(format!(
                    "example {n} has feature index {idx} ≥ dimension {dimension}"
                )));
            }
        }
        Ok(Dataset {
            examples,
            dimension,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Fraction of examples labelled 1.
    pub fn positive_fraction(&self) -> f64 {
        if self.examples.is_empty() {
            return 0.0;
        }
        self.examples.iter().filter(|e| e.label == 1).count() as f64 / self.len() as f64
    }

    fn with_examples(&self, examples: Vec<Example>) -> Dataset {
        Dataset {
            examples,
            dimension: self.dimension,
        }
    }

    /// Random split into (train, test) where train receives
    /// `round(train_fraction·N)` examples.
    pub fn split<R: Rng + ?Sized>(&self, train_fraction: f64, rng: &mut R) -> (Dataset, Dataset) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        let n_train = ((train_fraction * self.len() as f64).round() as usize).min(self.len());
        let pick = |idx: &[usize]| idx.iter().map(|&i| self.examples[i].clone()).collect();
        (
            self.with_examples(pick(&order[..n_train])),
            self.with_examples(pick(&order[n_train..])),
        )
    }

    /// Splits into `parts` shards. With `by_label` the examples are sorted by
    /// label before cutting (clients see skewed label mixes); otherwise they
    /// are shuffled. Shard sizes differ by at most one.
    pub fn partition<R: Rng + ?Sized>(&self, parts: usize, by_label: bool, rng: &mut R) -> Vec<Dataset> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        if by_label {
            order.sort_by_key(|&i| self.examples[i].label);
        }
        let base = self.len() / parts;
        let extra = self.len() % parts;
        let mut out = Vec::with_capacity(parts);
        let mut start = 0;
        for p in 0..parts {
            let len = base + usize::from(p < extra);
            let shard = order[start..start + len]
                .iter()
                .map(|&i| self.examples[i].clone())
                .collect();
            out.push(self.with_examples(shard));
            start += len;
        }
        out
    }

    /// Concatenation of several datasets of equal dimension.
    pub fn union(parts: &[Dataset]) -> Result<Dataset> {
        let dimension = parts.iter().map(|d| d.dimension).max().unwrap_or(1);
        let examples = parts.iter().flat_map(|d| d.examples.iter().cloned()).collect();
        Dataset::new(examples, dimension)
    }

    /// Returns the same examples with a larger feature dimension.
    pub fn widened(&self, dimension: usize) -> Result<Dataset> {
        Dataset::new(self.examples.clone(), dimension.max(self.dimension))
    }
}

/// Reads a LIBSVM file (`<label> <index>:<value> ...`, 1-based indices).
///
/// Labels `+1`/`1` map to 1; `-1`/`0` map to 0. Blank lines and lines
/// starting with `#` are skipped. The dimension is the largest index seen or
/// `dimension_hint`, whichever is larger.
pub fn load_libsvm(path: &Path, dimension_hint: Option<usize>) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_libsvm(&text, path, dimension_hint)
}

/// Parses LIBSVM text; `path` is used only for error messages.
pub fn parse_libsvm(text: &str, path: &Path, dimension_hint: Option<usize>) -> Result<Dataset> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut examples = Vec::new();
    let mut max_index = 0usize;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label_val: f64 = label_tok
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid label {label_tok:?}")))?;
        let label = match label_val {
            v if v == 1.0 => 1,
            v if v == -1.0 || v == 0.0 => 0,
            v => return Err(parse_err(line_no, format!("label {v} is not binary"))),
        };
        let mut features = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(line_no, format!("expected index:value, got {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_err(line_no, format!("invalid feature index {idx:?}")))?;
            if idx == 0 {
                return Err(parse_err(line_no, "feature indices are 1-based".into()));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| parse_err(line_no, format!("invalid feature value {val:?}")))?;
            max_index = max_index.max(idx);
            features.push(((idx - 1) as u32, val));
        }
        examples.push(Example { features, label });
    }
    if examples.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    let dimension = max_index.max(dimension_hint.unwrap_or(0)).max(1);
    Dataset::new(examples, dimension)
}

/// Logistic loss with optional ℓ₂ regularization and bias.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    dimension: usize,
    lambda: f64,
    includes_bias: bool,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Objective {
    /// `dimension` is the feature dimension; the model has one extra entry
    /// when `includes_bias` is set. `lambda > 0` makes the objective
    /// λ-strongly convex.
    pub fn new(dimension: usize, lambda: f64, includes_bias: bool) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Domain(format!("λ must be a finite non-negative real, got {lambda}")));
        }
        Ok(Objective {
            dimension,
            lambda,
            includes_bias,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn includes_bias(&self) -> bool {
        self.includes_bias
    }

    /// Feature dimension.
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Length of model vectors.
    pub fn model_len(&self) -> usize {
        self.dimension + usize::from(self.includes_bias)
    }

    /// Copy with a different regularization strength.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Objective::new(self.dimension, lambda, self.includes_bias)
    }

    fn check_model(&self, w: &ModelVector) -> Result<()> {
        if w.len() != self.model_len() {
            return Err(Error::DimensionMismatch {
                expected: self.model_len(),
                found: w.len(),
            });
        }
        Ok(())
    }

    fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.dimension() > self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: ds.dimension(),
            });
        }
        Ok(())
    }

    /// Linear score `w·x + b`.
    pub fn margin(&self, w: &ModelVector, ex: &Example) -> f64 {
        let mut z: f64 = ex.features.iter().map(|&(j, x)| w.0[j as usize] * x).sum();
        if self.includes_bias {
            z += w.0[self.dimension];
        }
        z
    }

    /// `(λ/2)·‖w‖²` over the non-bias weights.
    pub fn regularizer(&self, w: &ModelVector) -> f64 {
        if self.lambda == 0.0 {
            return 0.0;
        }
        let sq: f64 = w.0[..self.dimension].iter().map(|x| x * x).sum();
        0.5 * self.lambda * sq
    }

    /// Mean cross-entropy over `ds` without the regularizer.
    pub fn data_loss(&self, w: &ModelVector, ds: &Dataset) -> Result<f64> {
        self.check_model(w)?;
        self.check_dataset(ds)?;
        if ds.is_empty() {
            return Ok(0.0);
        }
        let total: f64 = ds
            .examples()
            .iter()
            .map(|ex| {
                let p = sigmoid(self.margin(w, ex)).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                if ex.label == 1 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum();
        Ok(total / ds.len() as f64)
    }

    /// Mean cross-entropy plus `(λ/2)‖w‖²`.
    pub fn loss(&self, w: &ModelVector, ds: &Dataset) -> Result<f64> {
        Ok(self.data_loss(w, ds)? + self.regularizer(w))
    }

    /// Gradient of the per-sample loss `f(w; ξ)`: `(σ − y)·x + λ·w` (bias
    /// entry unregularized).
    pub fn grad(&self, w: &ModelVector, ex: &Example) -> Result<ModelVector> {
        self.check_model(w)?;
        let mut g = ModelVector::zeros(self.model_len());
        self.grad_into(w, ex, &mut g);
        Ok(g)
    }

    /// Writes the per-sample gradient into `g`, which must have the model
    /// length; dimensions are not re-checked.
    pub fn grad_into(&self, w: &ModelVector, ex: &Example, g: &mut ModelVector) {
        let residual = sigmoid(self.margin(w, ex)) - f64::from(ex.label);
        if self.lambda == 0.0 {
            g.0.iter_mut().for_each(|x| *x = 0.0);
        } else {
            for (gj, wj) in g.0[..self.dimension].iter_mut().zip(&w.0[..self.dimension]) {
                *gj = self.lambda * wj;
            }
            if self.includes_bias {
                g.0[self.dimension] = 0.0;
            }
        }
        for &(j, x) in &ex.features {
            g.0[j as usize] += residual * x;
        }
        if self.includes_bias {
            g.0[self.dimension] += residual;
        }
    }

    /// Fraction of examples whose prediction (class 1 iff σ ≥ ½) matches the
    /// label; 0 for an empty dataset.
    pub fn accuracy(&self, w: &ModelVector, ds: &Dataset) -> Result<f64> {
        self.check_model(w)?;
        self.check_dataset(ds)?;
        if ds.is_empty() {
            return Ok(0.0);
        }
        let correct = ds
            .examples()
            .iter()
            .filter(|ex| u8::from(self.margin(w, ex) >= 0.0) == ex.label)
            .count();
        Ok(correct as f64 / ds.len() as f64)
    }
}

/// Scales `g` by `1/max{1, ‖g‖/C}`. Vectors whose norm exceeds `C` by less
/// than a relative 10⁻¹² are returned unchanged, which makes clipping
/// idempotent in floating point.
pub fn clip(g: &ModelVector, c: f64) -> ModelVector {
    let mut out = g.clone();
    clip_in_place(&mut out, c);
    out
}

/// In-place form of [`clip`].
pub fn clip_in_place(g: &mut ModelVector, c: f64) {
    let norm = g.norm();
    if norm <= c * (1.0 + CLIP_SLACK) {
        return;
    }
    g.scale(c / norm);
}
