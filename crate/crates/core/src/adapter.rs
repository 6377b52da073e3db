//! Relation-aware residual adapter.
//!
//! The adapter reads `z = [q - c, q ⊙ c, q + c]`, runs one tanh hidden layer,
//! and feeds two heads: a residual head producing `Δc` (so `a = c + Δc`) and a
//! four-way outcome classifier with logits ordered `(TP, FN, FP, TN)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{ParamId, Tape, Tensor, Var};

pub const TRUNK_W: ParamId = ParamId(10);
pub const TRUNK_B: ParamId = ParamId(11);
pub const RESIDUAL_W: ParamId = ParamId(12);
pub const RESIDUAL_B: ParamId = ParamId(13);
pub const CLASS_W: ParamId = ParamId(14);
pub const CLASS_B: ParamId = ParamId(15);

pub const NUM_CLASSES: usize = 4;

/// `q - c` within this distance counts as a degenerate segment.
pub const DEGENERATE_SEGMENT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub hidden: usize,
    pub use_residual: bool,
    pub use_linear_norm: bool,
    pub use_context_init: bool,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            hidden: 64,
            use_residual: true,
            use_linear_norm: true,
            use_context_init: true,
        }
    }
}

/// `concat(q - c, q ⊙ c, q + c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationVector(Vec<f64>);

impl RelationVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len() / 3
    }

    pub fn difference(&self) -> &[f64] {
        &self.0[..self.dim()]
    }

    pub fn product(&self) -> &[f64] {
        let d = self.dim();
        &self.0[d..2 * d]
    }

    pub fn sum(&self) -> &[f64] {
        &self.0[2 * self.dim()..]
    }
}

pub fn relation_vector<T: Copy + Into<f64>>(q: &[T], c: &[T]) -> Result<RelationVector> {
    if q.len() != c.len() {
        return Err(Error::shape("relation_vector", &[q.len()], &[c.len()]));
    }
    let q: Vec<f64> = q.iter().map(|&v| v.into()).collect();
    let c: Vec<f64> = c.iter().map(|&v| v.into()).collect();
    let mut z = Vec::with_capacity(3 * q.len());
    z.extend(q.iter().zip(&c).map(|(a, b)| a - b));
    z.extend(q.iter().zip(&c).map(|(a, b)| a * b));
    z.extend(q.iter().zip(&c).map(|(a, b)| a + b));
    Ok(RelationVector(z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterOutput {
    /// Adapted embedding.
    pub a: Vec<f64>,
    /// Residual head output (`a - c` when the residual connection is on).
    pub delta: Vec<f64>,
    /// Ordered `(TP, FN, FP, TN)`.
    pub logits: [f64; NUM_CLASSES],
    pub alpha_star: f64,
    /// `min_α ||a - (αq + (1-α)c)||²` at `alpha_star`.
    pub segment_loss: f64,
}

impl AdapterOutput {
    pub fn probabilities(&self) -> [f64; NUM_CLASSES] {
        let max = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps = self.logits.map(|l| (l - max).exp());
        let total: f64 = exps.iter().sum();
        exps.map(|e| e / total)
    }

    pub fn predicted_class(&self) -> usize {
        argmax(&self.logits)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    pub config: AdapterConfig,
    pub dim: usize,
    pub trunk_w: Tensor,
    pub trunk_b: Tensor,
    pub residual_w: Tensor,
    pub residual_b: Tensor,
    pub class_w: Tensor,
    pub class_b: Tensor,
}

/// Adapter parameters bound on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundAdapter {
    pub trunk_w: Var,
    pub trunk_b: Var,
    pub residual_w: Var,
    pub residual_b: Var,
    pub class_w: Var,
    pub class_b: Var,
    pub use_residual: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct AdapterVars {
    pub z: Var,
    pub hidden: Var,
    pub delta: Var,
    pub a: Var,
    pub logits: Var,
}

fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt() as f32;
    Tensor::uniform(&[rows, cols], limit, rng)
}

impl Adapter {
    pub fn new<R: Rng + ?Sized>(cfg: &AdapterConfig, dim: usize, rng: &mut R) -> Result<Self> {
        if dim == 0 || cfg.hidden == 0 {
            return Err(Error::Config("adapter dim and hidden width must be positive".into()));
        }
        let h = cfg.hidden;
        let trunk_w = xavier(h, 3 * dim, rng);
        let residual_w = if cfg.use_context_init {
            Tensor::zeros(&[dim, h])
        } else {
            xavier(dim, h, rng)
        };
        Ok(Adapter {
            config: cfg.clone(),
            dim,
            trunk_w,
            trunk_b: Tensor::zeros(&[h]),
            residual_w,
            residual_b: Tensor::zeros(&[dim]),
            class_w: Tensor::zeros(&[NUM_CLASSES, h]),
            class_b: Tensor::zeros(&[NUM_CLASSES]),
        })
    }

    pub fn bind(&self, tape: &mut Tape<'_>) -> BoundAdapter {
        BoundAdapter {
            trunk_w: tape.param(TRUNK_W, &self.trunk_w),
            trunk_b: tape.param(TRUNK_B, &self.trunk_b),
            residual_w: tape.param(RESIDUAL_W, &self.residual_w),
            residual_b: tape.param(RESIDUAL_B, &self.residual_b),
            class_w: tape.param(CLASS_W, &self.class_w),
            class_b: tape.param(CLASS_B, &self.class_b),
            use_residual: self.config.use_residual,
        }
    }

    /// Forward pass for one `(q, c)` pair.
    pub fn adapt<T: Copy + Into<f64>>(&self, q: &[T], c: &[T]) -> Result<AdapterOutput> {
        if q.len() != self.dim || c.len() != self.dim {
            return Err(Error::shape("adapt", &[self.dim], &[q.len(), c.len()]));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let qv = tape.vector(q.iter().map(|&v| v.into()).collect());
        let cv = tape.vector(c.iter().map(|&v| v.into()).collect());
        let vars = bound.forward(&mut tape, qv, cv)?;
        let a = tape.value(vars.a).to_vec();
        let (alpha_star, segment_loss) = project_alpha(&a, tape.value(qv), tape.value(cv))?;
        let l = tape.value(vars.logits);
        Ok(AdapterOutput {
            a,
            delta: tape.value(vars.delta).to_vec(),
            logits: [l[0], l[1], l[2], l[3]],
            alpha_star,
            segment_loss,
        })
    }

    pub fn params(&self) -> Vec<(ParamId, &'static str, &Tensor)> {
        vec![
            (TRUNK_W, "adapter.trunk.weight", &self.trunk_w),
            (TRUNK_B, "adapter.trunk.bias", &self.trunk_b),
            (RESIDUAL_W, "adapter.residual.weight", &self.residual_w),
            (RESIDUAL_B, "adapter.residual.bias", &self.residual_b),
            (CLASS_W, "adapter.class.weight", &self.class_w),
            (CLASS_B, "adapter.class.bias", &self.class_b),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<(ParamId, &mut Tensor)> {
        vec![
            (TRUNK_W, &mut self.trunk_w),
            (TRUNK_B, &mut self.trunk_b),
            (RESIDUAL_W, &mut self.residual_w),
            (RESIDUAL_B, &mut self.residual_b),
            (CLASS_W, &mut self.class_w),
            (CLASS_B, &mut self.class_b),
        ]
    }
}

impl BoundAdapter {
    pub fn forward(&self, tape: &mut Tape<'_>, q: Var, c: Var) -> Result<AdapterVars> {
        let diff = tape.sub(q, c)?;
        let prod = tape.mul(q, c)?;
        let sum = tape.add(q, c)?;
        let z = tape.concat(&[diff, prod, sum])?;
        let pre = tape.affine(self.trunk_w, z, self.trunk_b)?;
        let hidden = tape.tanh(pre);
        let delta = tape.affine(self.residual_w, hidden, self.residual_b)?;
        let a = if self.use_residual { tape.add(c, delta)? } else { delta };
        let logits = tape.affine(self.class_w, hidden, self.class_b)?;
        Ok(AdapterVars {
            z,
            hidden,
            delta,
            a,
            logits,
        })
    }
}

/// Closed-form minimiser of `||a - (αq + (1-α)c)||²` over `α ∈ [0, 1]`.
///
/// Returns `(α*, loss)`. When `q` and `c` coincide the segment is a point and
/// `α* = 0`.
pub fn project_alpha(a: &[f64], q: &[f64], c: &[f64]) -> Result<(f64, f64)> {
    if a.len() != q.len() || q.len() != c.len() {
        return Err(Error::shape("project_alpha", &[a.len()], &[q.len(), c.len()]));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..a.len() {
        let u = q[i] - c[i];
        num += (a[i] - c[i]) * u;
        den += u * u;
    }
    let alpha = if den.sqrt() <= DEGENERATE_SEGMENT {
        0.0
    } else {
        (num / den).clamp(0.0, 1.0)
    };
    let mut loss = 0.0;
    for i in 0..a.len() {
        let r = a[i] - (alpha * q[i] + (1.0 - alpha) * c[i]);
        loss += r * r;
    }
    Ok((alpha, loss))
}

thread_local! {
    static NORM_LOSS_CALLS: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

/// Number of linear-norm loss evaluations made on the current thread.
pub fn norm_loss_evaluations() -> usize {
    NORM_LOSS_CALLS.with(|c| c.get())
}

fn count_norm_loss() {
    NORM_LOSS_CALLS.with(|c| c.set(c.get() + 1));
}

/// Mean segment-projection loss over `(a, q, c)` triples.
pub fn norm_loss_batch(triples: &[(&[f64], &[f64], &[f64])]) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::EmptyInput("norm_loss_batch"));
    }
    count_norm_loss();
    let mut total = 0.0;
    for (a, q, c) in triples {
        total += project_alpha(a, q, c)?.1;
    }
    Ok(total / triples.len() as f64)
}

/// Taped mean segment-projection loss. `α*` is found from the current values
/// and held fixed in the backward pass.
pub fn tape_norm_loss(tape: &mut Tape<'_>, triples: &[(Var, Var, Var)]) -> Result<Var> {
    if triples.is_empty() {
        return Err(Error::EmptyInput("norm_loss_batch"));
    }
    count_norm_loss();
    let mut terms = Vec::with_capacity(triples.len());
    for &(a, q, c) in triples {
        let (alpha, _) = project_alpha(tape.value(a), tape.value(q), tape.value(c))?;
        terms.push(tape.segment_residual(a, q, c, alpha)?);
    }
    tape.mean(&terms)
}
