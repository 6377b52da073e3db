use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{sigmoid, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    #[default]
    Dot,
    Cosine,
}

impl std::fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SimilarityKind::Dot => f.write_str("dot"),
            SimilarityKind::Cosine => f.write_str("cosine"),
        }
    }
}

fn check_dims(q: usize, d: usize) -> Result<()> {
    if q != d {
        return Err(Error::shape("similarity", &[q], &[d]));
    }
    Ok(())
}

fn dot_unchecked<T: Copy + Into<f64>>(q: &[T], d: &[T]) -> f64 {
    q.iter().zip(d).fold(0.0f64, |acc, (&a, &b)| acc + a.into() * b.into())
}

pub fn dot<T: Copy + Into<f64>>(q: &[T], d: &[T]) -> Result<f64> {
    check_dims(q.len(), d.len())?;
    Ok(dot_unchecked(q, d))
}

pub fn norm<T: Copy + Into<f64>>(v: &[T]) -> f64 {
    dot_unchecked(v, v).sqrt()
}

/// `q·d / sqrt(|q|²|d|²)`; exactly 1 when `q == d`.
pub fn cosine<T: Copy + Into<f64>>(q: &[T], d: &[T]) -> Result<f64> {
    check_dims(q.len(), d.len())?;
    let ip = dot_unchecked(q, d);
    let (qq, dd) = (dot_unchecked(q, q), dot_unchecked(d, d));
    if qq == 0.0 || dd == 0.0 {
        return Err(Error::DegenerateVector);
    }
    Ok((ip / (qq * dd).sqrt()).clamp(-1.0, 1.0))
}

pub fn similarity<T: Copy + Into<f64>>(kind: SimilarityKind, q: &[T], d: &[T]) -> Result<f64> {
    match kind {
        SimilarityKind::Dot => dot(q, d),
        SimilarityKind::Cosine => cosine(q, d),
    }
}

/// Cosine mapped affinely onto `[0, 1]`.
pub fn unit_interval_similarity<T: Copy + Into<f64>>(q: &[T], d: &[T]) -> Result<f64> {
    Ok((1.0 + cosine(q, d)?) / 2.0)
}

/// Maps a raw base score of the given kind monotonically onto `[0, 1]`:
/// `σ(s)` for dot products, `(1 + s) / 2` for cosines.
pub fn base_unit_score(kind: SimilarityKind, score: f64) -> f64 {
    match kind {
        SimilarityKind::Dot => sigmoid(score),
        SimilarityKind::Cosine => ((1.0 + score) / 2.0).clamp(0.0, 1.0),
    }
}

/// Taped similarity, for use inside training losses.
pub fn tape_similarity(tape: &mut Tape<'_>, kind: SimilarityKind, a: Var, b: Var) -> Result<Var> {
    match kind {
        SimilarityKind::Dot => tape.dot(a, b),
        SimilarityKind::Cosine => tape.cosine(a, b),
    }
}
