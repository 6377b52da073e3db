//! Losses and labels: pointwise contrastive BCE, four-way outcome labels,
//! class-imbalance weights, weighted cross-entropy and the joint objective.

use serde::{Deserialize, Serialize};

use crate::adapter::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::numkernel::{sigmoid, softplus, Tape, Var};

/// Outcome of the encoder's prediction against the gold label.
/// The discriminant is the class index used by the adapter's logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutcomeLabel {
    TP = 0,
    FN = 1,
    FP = 2,
    TN = 3,
}

impl OutcomeLabel {
    pub const ALL: [OutcomeLabel; NUM_CLASSES] =
        [OutcomeLabel::TP, OutcomeLabel::FN, OutcomeLabel::FP, OutcomeLabel::TN];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn gold(self) -> bool {
        matches!(self, OutcomeLabel::TP | OutcomeLabel::FN)
    }

    pub fn predicted_positive(self) -> bool {
        matches!(self, OutcomeLabel::TP | OutcomeLabel::FP)
    }

    /// The encoder got this pair wrong.
    pub fn is_error(self) -> bool {
        matches!(self, OutcomeLabel::FN | OutcomeLabel::FP)
    }

    pub fn name(self) -> &'static str {
        match self {
            OutcomeLabel::TP => "TP",
            OutcomeLabel::FN => "FN",
            OutcomeLabel::FP => "FP",
            OutcomeLabel::TN => "TN",
        }
    }
}

impl std::fmt::Display for OutcomeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Predicted positive iff `σ(score) ≥ tau`.
pub fn derive_outcome(gold: bool, score: f64, tau: f64) -> OutcomeLabel {
    let predicted = sigmoid(score) >= tau;
    match (gold, predicted) {
        (true, true) => OutcomeLabel::TP,
        (true, false) => OutcomeLabel::FN,
        (false, true) => OutcomeLabel::FP,
        (false, false) => OutcomeLabel::TN,
    }
}

/// `-(1/N) Σ [y ln σ(s) + (1-y) ln(1-σ(s))]`, evaluated through softplus.
pub fn contrastive_bce(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("contrastive_bce"));
    }
    if scores.len() != labels.len() {
        return Err(Error::shape("contrastive_bce", &[scores.len()], &[labels.len()]));
    }
    let mut total = 0.0;
    for (&s, &y) in scores.iter().zip(labels) {
        if y != 0.0 && y != 1.0 {
            return Err(Error::InvalidLabel(y));
        }
        total += y * softplus(-s) + (1.0 - y) * softplus(s);
    }
    Ok(total / scores.len() as f64)
}

/// Taped mean BCE over `(score, label)` pairs.
pub fn tape_contrastive_bce(tape: &mut Tape<'_>, pairs: &[(Var, f64)]) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("contrastive_bce"));
    }
    let mut terms = Vec::with_capacity(pairs.len());
    for &(s, y) in pairs {
        if y != 0.0 && y != 1.0 {
            return Err(Error::InvalidLabel(y));
        }
        terms.push(tape.bce_with_logits(s, y)?);
    }
    tape.mean(&terms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w: [f64; NUM_CLASSES],
    pub gamma_imb: f64,
}

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights {
            w: [1.0; NUM_CLASSES],
            gamma_imb: 0.0,
        }
    }

    pub fn weight(&self, label: OutcomeLabel) -> f64 {
        self.w[label.index()]
    }
}

pub fn label_counts(labels: &[OutcomeLabel]) -> [u64; NUM_CLASSES] {
    let mut counts = [0u64; NUM_CLASSES];
    for l in labels {
        counts[l.index()] += 1;
    }
    counts
}

/// Inverse-frequency weights raised to `gamma_imb`, normalised to mean 1.
pub fn class_weights(counts: &[u64; NUM_CLASSES], gamma_imb: f64) -> Result<ClassWeights> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyInput("class_weights: all counts are zero"));
    }
    if !gamma_imb.is_finite() || gamma_imb < 0.0 {
        return Err(Error::OutOfRange(format!("gamma_imb = {gamma_imb}")));
    }
    let raw = counts.map(|c| (total as f64 / (NUM_CLASSES as f64 * c.max(1) as f64)).powf(gamma_imb));
    let mean = raw.iter().sum::<f64>() / NUM_CLASSES as f64;
    Ok(ClassWeights {
        w: raw.map(|r| r / mean),
        gamma_imb,
    })
}

/// `w[label] · (-log softmax(logits)[label])`.
pub fn weighted_ce(logits: &[f64; NUM_CLASSES], label: OutcomeLabel, weights: &ClassWeights) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_denom = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    weights.weight(label) * (log_denom - (logits[label.index()] - max))
}

pub fn tape_weighted_ce(tape: &mut Tape<'_>, logits: Var, label: OutcomeLabel, weights: &ClassWeights) -> Result<Var> {
    tape.weighted_ce(logits, label.index(), weights.weight(label))
}

/// Label-directed pull on the adapted embedding: towards `q` for gold
/// positives (TP/FN), back to `c` otherwise, scaled by `1 / ||q - c||²`.
pub fn tape_directional_loss(
    tape: &mut Tape<'_>,
    a: Var,
    q: Var,
    c: Var,
    label: OutcomeLabel,
    weight: f64,
) -> Result<Var> {
    let target = if label.gold() { q } else { c };
    let gap: f64 = tape
        .value(q)
        .iter()
        .zip(tape.value(c))
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let diff = tape.sub(a, target)?;
    let sq = tape.squared_norm(diff);
    Ok(tape.scale(sq, weight / gap.max(1e-12)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLossConfig {
    pub lambda: f64,
}

impl Default for JointLossConfig {
    fn default() -> Self {
        JointLossConfig { lambda: 0.5 }
    }
}

pub fn joint_loss(l_contrastive: f64, l_adapter: f64, cfg: &JointLossConfig) -> f64 {
    l_contrastive + cfg.lambda * l_adapter
}
