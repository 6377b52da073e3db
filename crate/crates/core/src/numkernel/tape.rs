//! Tape-based reverse mode over a fixed op set.
//!
//! Values live on the tape in f64; parameters are stored as f32 [`Tensor`]s
//! and upcast when bound. Every reduction accumulates left to right, so a
//! backward pass is bit-reproducible for a fixed recording order.

use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Identifies a trainable parameter across tapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op<'a> {
    Input,
    Param(ParamId),
    EmbeddingBagMean {
        param: ParamId,
        table: &'a Tensor,
        rows: Vec<usize>,
    },
    MatVec(Var, Var),
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Scale(Var, f64),
    Dot(Var, Var),
    Cosine(Var, Var),
    Concat(Vec<Var>),
    Sum(Vec<Var>),
    SquaredNorm(Var),
    BceWithLogits {
        logit: Var,
        label: f64,
    },
    WeightedCe {
        logits: Var,
        label: usize,
        weight: f64,
        probs: Vec<f64>,
    },
    SegmentResidual {
        a: Var,
        q: Var,
        c: Var,
        alpha: f64,
        residual: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node<'a> {
    dims: Vec<usize>,
    value: Vec<f64>,
    op: Op<'a>,
}

/// Records a forward computation so gradients can be replayed in reverse.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn dot_f64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, dims: Vec<usize>, value: Vec<f64>, op: Op<'a>) -> Var {
        self.nodes.push(Node { dims, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].dims
    }

    /// Leaf with the given values; gradients w.r.t. it are reported by backward.
    pub fn input(&mut self, dims: &[usize], value: Vec<f64>) -> Result<Var> {
        let n: usize = dims.iter().product();
        if n != value.len() || dims.is_empty() {
            return Err(Error::shape("input", dims, &[value.len()]));
        }
        Ok(self.push(dims.to_vec(), value, Op::Input))
    }

    pub fn vector(&mut self, value: Vec<f64>) -> Var {
        let n = value.len();
        self.push(vec![n], value, Op::Input)
    }

    pub fn vector_f32(&mut self, value: &[f32]) -> Var {
        self.vector(value.iter().map(|&v| v as f64).collect())
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.push(vec![1], vec![value], Op::Input)
    }

    /// Binds a parameter tensor as a leaf.
    pub fn param(&mut self, id: ParamId, t: &Tensor) -> Var {
        self.push(t.dims().to_vec(), t.to_f64(), Op::Param(id))
    }

    /// Mean of the given rows of an embedding table.
    pub fn embedding_bag_mean(&mut self, id: ParamId, table: &'a Tensor, rows: &[usize]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::EmptyText);
        }
        if table.dims().len() != 2 {
            return Err(Error::shape("embedding_bag_mean", table.dims(), &[0, 0]));
        }
        let (n_rows, d) = (table.rows(), table.cols());
        if let Some(&bad) = rows.iter().find(|&&r| r >= n_rows) {
            return Err(Error::shape("embedding_bag_mean", table.dims(), &[bad]));
        }
        let mut acc = vec![0.0f64; d];
        for &r in rows {
            for (a, &v) in acc.iter_mut().zip(table.row(r)) {
                *a += v as f64;
            }
        }
        let inv = 1.0 / rows.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Ok(self.push(
            vec![d],
            acc,
            Op::EmbeddingBagMean {
                param: id,
                table,
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let wd = self.dims(w).to_vec();
        let xd = self.dims(x).to_vec();
        if wd.len() != 2 || xd.len() != 1 || wd[1] != xd[0] {
            return Err(Error::shape("matvec", &wd, &xd));
        }
        let (m, n) = (wd[0], wd[1]);
        let wv = self.value(w);
        let xv = self.value(x);
        let out = (0..m).map(|i| dot_f64(&wv[i * n..(i + 1) * n], xv)).collect();
        Ok(self.push(vec![m], out, Op::MatVec(w, x)))
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let y = self.matvec(w, x)?;
        self.add(y, b)
    }

    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (ad, bd) = (self.dims(a), self.dims(b));
        if ad != bd {
            let op = match kind {
                Binary::Add => "add",
                Binary::Sub => "sub",
                Binary::Mul => "mul",
            };
            return Err(Error::shape(op, ad, bd));
        }
        let dims = ad.to_vec();
        let (av, bv) = (self.value(a), self.value(b));
        let out = av
            .iter()
            .zip(bv)
            .map(|(&x, &y)| match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
            })
            .collect();
        Ok(self.push(dims, out, Op::Binary(kind, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let dims = self.dims(a).to_vec();
        let out = self
            .value(a)
            .iter()
            .map(|&x| match kind {
                Unary::Tanh => x.tanh(),
                Unary::Relu => x.max(0.0),
                Unary::Sigmoid => sigmoid(x),
            })
            .collect();
        self.push(dims, out, Op::Unary(kind, a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let dims = self.dims(a).to_vec();
        let out = self.value(a).iter().map(|&x| x * k).collect();
        self.push(dims, out, Op::Scale(a, k))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ad, bd) = (self.dims(a), self.dims(b));
        if ad.len() != 1 || ad != bd {
            return Err(Error::shape("dot", ad, bd));
        }
        let v = dot_f64(self.value(a), self.value(b));
        Ok(self.push(vec![1], vec![v], Op::Dot(a, b)))
    }

    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ad, bd) = (self.dims(a), self.dims(b));
        if ad.len() != 1 || ad != bd {
            return Err(Error::shape("cosine", ad, bd));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let (aa, bb) = (dot_f64(av, av), dot_f64(bv, bv));
        if aa == 0.0 || bb == 0.0 {
            return Err(Error::DegenerateVector);
        }
        let v = (dot_f64(av, bv) / (aa * bb).sqrt()).clamp(-1.0, 1.0);
        Ok(self.push(vec![1], vec![v], Op::Cosine(a, b)))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            if self.dims(p).len() != 1 {
                return Err(Error::shape("concat", self.dims(p), &[0]));
            }
            out.extend_from_slice(self.value(p));
        }
        if out.is_empty() {
            return Err(Error::EmptyInput("concat"));
        }
        let n = out.len();
        Ok(self.push(vec![n], out, Op::Concat(parts.to_vec())))
    }

    /// Sum of scalar nodes, accumulated in the given order.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("sum"));
        }
        let mut acc = 0.0;
        for &p in parts {
            if self.value(p).len() != 1 {
                return Err(Error::shape("sum", self.dims(p), &[1]));
            }
            acc += self.scalar(p);
        }
        Ok(self.push(vec![1], vec![acc], Op::Sum(parts.to_vec())))
    }

    pub fn mean(&mut self, parts: &[Var]) -> Result<Var> {
        let s = self.sum(parts)?;
        Ok(self.scale(s, 1.0 / parts.len() as f64))
    }

    pub fn squared_norm(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = dot_f64(v, v);
        self.push(vec![1], vec![s], Op::SquaredNorm(a))
    }

    /// `-[y ln σ(s) + (1-y) ln(1-σ(s))]` for a scalar logit `s`.
    pub fn bce_with_logits(&mut self, logit: Var, label: f64) -> Result<Var> {
        if self.value(logit).len() != 1 {
            return Err(Error::shape("bce_with_logits", self.dims(logit), &[1]));
        }
        let s = self.scalar(logit);
        let loss = label * softplus(-s) + (1.0 - label) * softplus(s);
        Ok(self.push(vec![1], vec![loss], Op::BceWithLogits { logit, label }))
    }

    /// `weight * -log softmax(logits)[label]`.
    pub fn weighted_ce(&mut self, logits: Var, label: usize, weight: f64) -> Result<Var> {
        let z = self.value(logits);
        if self.dims(logits).len() != 1 || label >= z.len() {
            return Err(Error::shape("weighted_ce", self.dims(logits), &[label]));
        }
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &v in z {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln();
        let probs: Vec<f64> = z.iter().map(|&v| (v - max).exp() / denom).collect();
        let loss = weight * (log_denom - (z[label] - max));
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::WeightedCe {
                logits,
                label,
                weight,
                probs,
            },
        ))
    }

    /// `||a - (αq + (1-α)c)||²` with α held fixed in the backward pass.
    pub fn segment_residual(&mut self, a: Var, q: Var, c: Var, alpha: f64) -> Result<Var> {
        let ad = self.dims(a);
        if ad != self.dims(q) || ad != self.dims(c) || ad.len() != 1 {
            return Err(Error::shape("segment_residual", ad, self.dims(q)));
        }
        let (av, qv, cv) = (self.value(a), self.value(q), self.value(c));
        let residual: Vec<f64> = av
            .iter()
            .zip(qv.iter().zip(cv))
            .map(|(&ai, (&qi, &ci))| ai - (alpha * qi + (1.0 - alpha) * ci))
            .collect();
        let loss = dot_f64(&residual, &residual);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::SegmentResidual {
                a,
                q,
                c,
                alpha,
                residual,
            },
        ))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::shape("backward", self.dims(output), &[1]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![1.0]);
        let mut params: BTreeMap<ParamId, Vec<f64>> = BTreeMap::new();

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let send = |target: Var, contrib: &[f64], grads: &mut Vec<Option<Vec<f64>>>| match &mut grads[target.0] {
                Some(existing) => add_into(existing, contrib),
                slot @ None => *slot = Some(contrib.to_vec()),
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let len = g.len();
                    add_into(params.entry(*id).or_insert_with(|| vec![0.0; len]), &g);
                }
                Op::EmbeddingBagMean { param, table, rows } => {
                    let d = table.cols();
                    let entry = params.entry(*param).or_insert_with(|| vec![0.0; table.len()]);
                    let inv = 1.0 / rows.len() as f64;
                    for &r in rows {
                        for (dst, &gi) in entry[r * d..(r + 1) * d].iter_mut().zip(&g) {
                            *dst += gi * inv;
                        }
                    }
                }
                Op::MatVec(w, x) => {
                    let (m, n) = (self.nodes[w.0].dims[0], self.nodes[w.0].dims[1]);
                    let wv = &self.nodes[w.0].value;
                    let xv = &self.nodes[x.0].value;
                    let mut gw = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            gw[i * n + j] = g[i] * xv[j];
                        }
                    }
                    let mut gx = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            gx[j] += wv[i * n + j] * g[i];
                        }
                    }
                    send(*w, &gw, &mut grads);
                    send(*x, &gx, &mut grads);
                }
                Op::Binary(kind, a, b) => match kind {
                    Binary::Add => {
                        send(*a, &g, &mut grads);
                        send(*b, &g, &mut grads);
                    }
                    Binary::Sub => {
                        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                        send(*a, &g, &mut grads);
                        send(*b, &neg, &mut grads);
                    }
                    Binary::Mul => {
                        let av = &self.nodes[a.0].value;
                        let bv = &self.nodes[b.0].value;
                        let ga: Vec<f64> = g.iter().zip(bv).map(|(gi, bi)| gi * bi).collect();
                        let gb: Vec<f64> = g.iter().zip(av).map(|(gi, ai)| gi * ai).collect();
                        send(*a, &ga, &mut grads);
                        send(*b, &gb, &mut grads);
                    }
                },
                Op::Unary(kind, a) => {
                    let y = &node.value;
                    let x = &self.nodes[a.0].value;
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(y.iter().zip(x))
                        .map(|(&gi, (&yi, &xi))| match kind {
                            Unary::Tanh => gi * (1.0 - yi * yi),
                            Unary::Relu => {
                                if xi > 0.0 {
                                    gi
                                } else {
                                    0.0
                                }
                            }
                            Unary::Sigmoid => gi * yi * (1.0 - yi),
                        })
                        .collect();
                    send(*a, &ga, &mut grads);
                }
                Op::Scale(a, k) => {
                    let ga: Vec<f64> = g.iter().map(|gi| gi * k).collect();
                    send(*a, &ga, &mut grads);
                }
                Op::Dot(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let ga: Vec<f64> = bv.iter().map(|bi| g[0] * bi).collect();
                    let gb: Vec<f64> = av.iter().map(|ai| g[0] * ai).collect();
                    send(*a, &ga, &mut grads);
                    send(*b, &gb, &mut grads);
                }
                Op::Cosine(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let na = dot_f64(av, av).sqrt();
                    let nb = dot_f64(bv, bv).sqrt();
                    let cos = dot_f64(av, bv) / (na * nb);
                    // d cos / da = b/(|a||b|) - cos a/|a|²
                    let ga: Vec<f64> = av
                        .iter()
                        .zip(bv)
                        .map(|(ai, bi)| g[0] * (bi / (na * nb) - cos * ai / (na * na)))
                        .collect();
                    let gb: Vec<f64> = av
                        .iter()
                        .zip(bv)
                        .map(|(ai, bi)| g[0] * (ai / (na * nb) - cos * bi / (nb * nb)))
                        .collect();
                    send(*a, &ga, &mut grads);
                    send(*b, &gb, &mut grads);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        send(*p, &g[off..off + n], &mut grads);
                        off += n;
                    }
                }
                Op::Sum(parts) => {
                    for p in parts {
                        send(*p, &g, &mut grads);
                    }
                }
                Op::SquaredNorm(a) => {
                    let ga: Vec<f64> = self.nodes[a.0].value.iter().map(|v| 2.0 * v * g[0]).collect();
                    send(*a, &ga, &mut grads);
                }
                Op::BceWithLogits { logit, label } => {
                    let s = self.nodes[logit.0].value[0];
                    send(*logit, &[g[0] * (sigmoid(s) - label)], &mut grads);
                }
                Op::WeightedCe {
                    logits,
                    label,
                    weight,
                    probs,
                } => {
                    let gl: Vec<f64> = probs
                        .iter()
                        .enumerate()
                        .map(|(i, &p)| {
                            let onehot = if i == *label { 1.0 } else { 0.0 };
                            g[0] * weight * (p - onehot)
                        })
                        .collect();
                    send(*logits, &gl, &mut grads);
                }
                Op::SegmentResidual {
                    a,
                    q,
                    c,
                    alpha,
                    residual,
                } => {
                    let ga: Vec<f64> = residual.iter().map(|r| 2.0 * r * g[0]).collect();
                    let gq: Vec<f64> = ga.iter().map(|v| -alpha * v).collect();
                    let gc: Vec<f64> = ga.iter().map(|v| -(1.0 - alpha) * v).collect();
                    send(*a, &ga, &mut grads);
                    send(*q, &gq, &mut grads);
                    send(*c, &gc, &mut grads);
                }
            }
            if matches!(node.op, Op::Input) {
                grads[idx] = Some(g);
            }
        }

        Ok(Gradients { inputs: grads, params })
    }
}

/// Result of a backward pass: gradients for parameters and for input leaves.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    inputs: Vec<Option<Vec<f64>>>,
    params: BTreeMap<ParamId, Vec<f64>>,
}

impl Gradients {
    /// Gradient w.r.t. an input leaf, `None` if the output does not depend on it.
    pub fn input(&self, v: Var) -> Option<&[f64]> {
        self.inputs.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(&id).map(|v| v.as_slice())
    }

    pub fn params(&self) -> &BTreeMap<ParamId, Vec<f64>> {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        ParamGrads(self.params)
    }
}

/// Parameter gradients, mergeable across tapes in a fixed order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamGrads(pub BTreeMap<ParamId, Vec<f64>>);

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.0.get(&id).map(|v| v.as_slice())
    }

    pub fn accumulate(&mut self, other: &ParamGrads) {
        for (id, g) in &other.0 {
            match self.0.get_mut(id) {
                Some(dst) => add_into(dst, g),
                None => {
                    self.0.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.0.values_mut() {
            g.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn remove(&mut self, id: ParamId) -> Option<Vec<f64>> {
        self.0.remove(&id)
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().all(|g| g.iter().all(|v| v.is_finite()))
    }
}
