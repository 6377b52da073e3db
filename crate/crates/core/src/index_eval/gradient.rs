use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::encoder::{tape_similarity, SimilarityKind};
use crate::error::{Error, Result};
use crate::numkernel::Tape;

/// Inclusive rank ranges; `None` means unbounded above.
pub const RANK_BUCKETS: [(usize, Option<usize>); 5] =
    [(0, Some(3)), (4, Some(9)), (10, Some(49)), (50, Some(199)), (200, None)];

pub const NORMALIZATION: &str = "divided by the maximum pair magnitude within the run";

pub fn bucket_of(rank: usize) -> usize {
    RANK_BUCKETS
        .iter()
        .position(|&(lo, hi)| rank >= lo && hi.is_none_or(|h| rank <= h))
        .expect("buckets cover all ranks")
}

pub fn bucket_label(b: usize) -> String {
    match RANK_BUCKETS[b] {
        (lo, Some(hi)) => format!("{lo}-{hi}"),
        (lo, None) => format!("{lo}+"),
    }
}

/// `‖∂ BCE(s(q, d), y = 0) / ∂d‖₂`, with `d` as a free input on the tape.
pub fn pair_gradient_norm(kind: SimilarityKind, q: &[f32], d: &[f32]) -> Result<f64> {
    let mut tape = Tape::new();
    let qv = tape.vector_f32(q);
    let dv = tape.vector_f32(d);
    let s = tape_similarity(&mut tape, kind, qv, dv)?;
    let loss = tape.bce_with_logits(s, 0.0)?;
    let grads = tape.backward(loss)?;
    let g = grads.input(dv).ok_or(Error::EmptyInput("gradient w.r.t. document"))?;
    Ok(g.iter().map(|v| v * v).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileCandidate {
    /// Rank under the base encoder.
    pub rank: usize,
    pub embedding: Vec<f32>,
    /// Probability that the sampler under study selects this candidate.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileQuery {
    pub embedding: Vec<f32>,
    pub candidates: Vec<ProfileCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub label: String,
    pub pairs: usize,
    /// Total sampler weight landing in the bucket.
    pub weight: f64,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientProfile {
    pub sampler: String,
    pub buckets: Vec<BucketStats>,
    pub max_magnitude: f64,
    pub normalization: String,
}

impl GradientProfile {
    pub fn bucket(&self, label: &str) -> Option<&BucketStats> {
        self.buckets.iter().find(|b| b.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sampler,bucket,pairs,weight,mean,variance\n");
        for b in &self.buckets {
            let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{},{}",
                self.sampler,
                b.label,
                b.pairs,
                b.weight,
                f(b.mean),
                f(b.variance)
            );
        }
        out
    }
}

/// Sampler-weighted mean and variance of normalised gradient magnitudes per
/// base-rank bucket. Read-only: nothing here can touch model parameters.
pub fn gradient_profile(kind: SimilarityKind, queries: &[ProfileQuery], sampler: &str) -> Result<GradientProfile> {
    let magnitudes: Vec<Vec<f64>> = queries
        .par_iter()
        .map(|q| {
            q.candidates
                .iter()
                .map(|c| pair_gradient_norm(kind, &q.embedding, &c.embedding))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let max = magnitudes.iter().flatten().cloned().fold(0.0f64, f64::max);

    let n = RANK_BUCKETS.len();
    let (mut pairs, mut w, mut s1, mut s2) = (vec![0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for (q, mags) in queries.iter().zip(&magnitudes) {
        for (c, &m) in q.candidates.iter().zip(mags) {
            let b = bucket_of(c.rank);
            let x = if max > 0.0 { m / max } else { 0.0 };
            pairs[b] += 1;
            w[b] += c.weight;
            s1[b] += c.weight * x;
            s2[b] += c.weight * x * x;
        }
    }
    let buckets = (0..n)
        .map(|b| {
            let (mean, variance) = if w[b] > 0.0 {
                let mean = s1[b] / w[b];
                (Some(mean), Some((s2[b] / w[b] - mean * mean).max(0.0)))
            } else {
                (None, None)
            };
            BucketStats {
                label: bucket_label(b),
                pairs: pairs[b],
                weight: w[b],
                mean,
                variance,
            }
        })
        .collect();
    Ok(GradientProfile {
        sampler: sampler.to_string(),
        buckets,
        max_magnitude: max,
        normalization: NORMALIZATION.to_string(),
    })
}
