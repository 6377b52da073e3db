use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::adapter::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::supervision::OutcomeLabel;

pub const DEFAULT_KS: [usize; 6] = [1, 5, 10, 20, 50, 100];

/// Query id to its set of relevant doc ids.
pub type Qrels = HashMap<String, HashSet<String>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at: BTreeMap<usize, f64>,
    /// Recall with hidden positives also counted as relevant.
    pub oracle_recall_at: Option<BTreeMap<usize, f64>>,
    /// Rank of the first relevant document per query, if retrieved.
    pub first_hit: BTreeMap<String, Option<usize>>,
    pub evaluated_queries: usize,
    /// Queries dropped because they had no relevance judgments.
    pub excluded_queries: usize,
    pub metadata: BTreeMap<String, String>,
}

fn first_relevant(ranked: &[String], relevant: &HashSet<String>) -> Option<usize> {
    ranked.iter().position(|d| relevant.contains(d))
}

fn hit_recall(hits: &[Option<usize>], ks: &[usize]) -> BTreeMap<usize, f64> {
    ks.iter()
        .map(|&k| {
            let n = hits.iter().filter(|h| h.is_some_and(|r| r < k)).count();
            (k, n as f64 / hits.len() as f64)
        })
        .collect()
}

/// Hit-based recall: a query scores 1 at `k` if any relevant doc is in its top `k`.
pub fn recall_at_k(ranked: &[(String, Vec<String>)], qrels: &Qrels, ks: &[usize]) -> Result<EvalReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("recall cutoffs must be positive".into()));
    }
    let mut first_hit = BTreeMap::new();
    let mut excluded = 0;
    for (qid, docs) in ranked {
        match qrels.get(qid).filter(|r| !r.is_empty()) {
            Some(rel) => {
                first_hit.insert(qid.clone(), first_relevant(docs, rel));
            }
            None => excluded += 1,
        }
    }
    if first_hit.is_empty() {
        return Err(Error::EmptyInput("recall_at_k: no judged queries"));
    }
    let hits: Vec<_> = first_hit.values().copied().collect();
    Ok(EvalReport {
        recall_at: hit_recall(&hits, ks),
        oracle_recall_at: None,
        evaluated_queries: first_hit.len(),
        first_hit,
        excluded_queries: excluded,
        metadata: BTreeMap::new(),
    })
}

/// Adds an oracle-recall column computed against `qrels ∪ hidden`.
pub fn with_oracle_recall(
    mut report: EvalReport,
    ranked: &[(String, Vec<String>)],
    qrels: &Qrels,
    hidden: &Qrels,
    ks: &[usize],
) -> EvalReport {
    let hits: Vec<Option<usize>> = ranked
        .iter()
        .filter(|(q, _)| report.first_hit.contains_key(q))
        .map(|(q, docs)| {
            let mut rel = qrels.get(q).cloned().unwrap_or_default();
            if let Some(h) = hidden.get(q) {
                rel.extend(h.iter().cloned());
            }
            first_relevant(docs, &rel)
        })
        .collect();
    if !hits.is_empty() {
        report.oracle_recall_at = Some(hit_recall(&hits, ks));
    }
    report
}

impl EvalReport {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall_at.get(&k).copied()
    }

    pub fn is_monotone(&self) -> bool {
        let ok = |m: &BTreeMap<usize, f64>| m.values().zip(m.values().skip(1)).all(|(a, b)| a <= b);
        ok(&self.recall_at) && self.oracle_recall_at.as_ref().is_none_or(ok)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,recall");
        if self.oracle_recall_at.is_some() {
            out.push_str(",oracle_recall");
        }
        out.push('\n');
        for (k, r) in &self.recall_at {
            let _ = write!(out, "{k},{r:.6}");
            if let Some(o) = &self.oracle_recall_at {
                let _ = write!(out, ",{:.6}", o[k]);
            }
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>6}  {:>8}  {:>8}",
            "k",
            "recall",
            if self.oracle_recall_at.is_some() { "oracle" } else { "" }
        );
        for (k, r) in &self.recall_at {
            let o = self
                .oracle_recall_at
                .as_ref()
                .map(|o| format!("{:.4}", o[k]))
                .unwrap_or_default();
            let _ = writeln!(out, "{k:>6}  {r:>8.4}  {o:>8}");
        }
        let _ = writeln!(
            out,
            "queries: {} evaluated, {} excluded",
            self.evaluated_queries, self.excluded_queries
        );
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryStats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// A precision, recall or F1 denominator was zero and the value was set to 0.
    pub zero_division: bool,
}

impl BinaryStats {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |n: usize, d: usize| {
            if d == 0 {
                (0.0, true)
            } else {
                (n as f64 / d as f64, false)
            }
        };
        let (precision, zp) = ratio(tp, tp + fp);
        let (recall, zr) = ratio(tp, tp + fn_);
        let (f1, zf) = ratio(2 * tp, 2 * tp + fp + fn_);
        BinaryStats {
            precision,
            recall,
            f1,
            support: tp + fn_,
            zero_division: zp || zr || zf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    /// One-vs-rest statistics in `(TP, FN, FP, TN)` order.
    pub per_class: [BinaryStats; NUM_CLASSES],
    pub macro_f1: f64,
    /// `{FN, FP}` against `{TP, TN}`.
    pub error_detection: BinaryStats,
    pub accuracy: f64,
    /// `confusion[gold][predicted]`.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

pub fn adapter_f1(predictions: &[OutcomeLabel], gold: &[OutcomeLabel]) -> Result<F1Report> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("adapter_f1"));
    }
    if predictions.len() != gold.len() {
        return Err(Error::shape("adapter_f1", &[predictions.len()], &[gold.len()]));
    }
    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    let (mut etp, mut efp, mut efn) = (0, 0, 0);
    for (&p, &g) in predictions.iter().zip(gold) {
        confusion[g.index()][p.index()] += 1;
        match (g.is_error(), p.is_error()) {
            (true, true) => etp += 1,
            (false, true) => efp += 1,
            (true, false) => efn += 1,
            (false, false) => {}
        }
    }
    let per_class: [BinaryStats; NUM_CLASSES] = std::array::from_fn(|c| {
        let tp = confusion[c][c];
        let fp = (0..NUM_CLASSES).map(|g| confusion[g][c]).sum::<usize>() - tp;
        let fn_ = confusion[c].iter().sum::<usize>() - tp;
        BinaryStats::from_counts(tp, fp, fn_)
    });
    let correct: usize = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
    Ok(F1Report {
        macro_f1: per_class.iter().map(|s| s.f1).sum::<f64>() / NUM_CLASSES as f64,
        per_class,
        error_detection: BinaryStats::from_counts(etp, efp, efn),
        accuracy: correct as f64 / gold.len() as f64,
        confusion,
    })
}

/// Error-detection F1 of always predicting the most frequent gold class
/// (ties to the lowest class index).
pub fn majority_baseline(gold: &[OutcomeLabel]) -> Result<F1Report> {
    let mut counts = [0usize; NUM_CLASSES];
    for g in gold {
        counts[g.index()] += 1;
    }
    let best = (0..NUM_CLASSES).fold(0, |b, c| if counts[c] > counts[b] { c } else { b });
    let label = OutcomeLabel::from_index(best).expect("class index in range");
    adapter_f1(&vec![label; gold.len()], gold)
}

pub fn qrels_from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Qrels {
    let mut q: Qrels = HashMap::new();
    for (qid, did) in pairs {
        q.entry(qid.to_string()).or_default().insert(did.to_string());
    }
    q
}

/// Sorted view, for stable printing.
pub fn sorted_qrels(q: &Qrels) -> BTreeMap<&str, BTreeSet<&str>> {
    q.iter()
        .map(|(k, v)| (k.as_str(), v.iter().map(String::as_str).collect()))
        .collect()
}
