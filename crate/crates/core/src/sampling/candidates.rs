use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scores::{rerank_score, score_pair};
use crate::adapter::{Adapter, NUM_CLASSES};
use crate::encoder::{base_unit_score, SimilarityKind};
use crate::error::{Error, Result};
use crate::index_eval::{rank_order, BruteForceIndex};
use crate::io_util::{read_to_string, write_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub query_id: String,
    pub doc_id: String,
    pub s_base: f64,
    pub s_hn: f64,
    pub s_fn: f64,
    pub composite: f64,
    pub rank: usize,
}

/// Top-`k` non-gold documents by base score. `k` beyond the corpus returns
/// every non-gold document.
pub fn mine_hard_negatives(
    index: &BruteForceIndex,
    query_id: &str,
    query: &[f32],
    k: usize,
    exclude: &HashSet<String>,
) -> Result<Vec<ScoredCandidate>> {
    if k == 0 {
        return Err(Error::OutOfRange("mining pool size k must be >= 1".into()));
    }
    let rows: HashSet<usize> = exclude.iter().filter_map(|d| index.row_of(d)).collect();
    let hits = index.search_excluding(query, k, &rows)?;
    Ok(hits
        .into_iter()
        .enumerate()
        .map(|(rank, h)| ScoredCandidate {
            query_id: query_id.to_string(),
            doc_id: h.doc_id,
            s_base: h.score,
            s_hn: 0.0,
            s_fn: 0.0,
            composite: h.score,
            rank,
        })
        .collect())
}

/// Fills `s_hn` and `s_fn` from the adapter; returns the class probabilities
/// per candidate in the same order.
pub fn score_candidates(
    index: &BruteForceIndex,
    query: &[f32],
    candidates: &mut [ScoredCandidate],
    adapter: &Adapter,
) -> Result<Vec<[f64; NUM_CLASSES]>> {
    let rows = candidates
        .iter()
        .map(|c| {
            index
                .row_of(&c.doc_id)
                .ok_or_else(|| Error::Data(format!("candidate {} not in index", c.doc_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let scored = rows
        .par_iter()
        .map(|&r| score_pair(query, index.embedding(r), adapter))
        .collect::<Result<Vec<_>>>()?;
    Ok(candidates
        .iter_mut()
        .zip(scored)
        .map(|(c, s)| {
            c.s_hn = s.s_hn;
            c.s_fn = s.s_fn;
            s.output.probabilities()
        })
        .collect())
}

/// Sets `rank` to position and orders by composite descending, then base
/// score descending, then doc id ascending.
pub fn sort_by_composite(candidates: &mut [ScoredCandidate]) {
    candidates.sort_by(|a, b| {
        b.composite
            .total_cmp(&a.composite)
            .then_with(|| rank_order(a.s_base, &a.doc_id, b.s_base, &b.doc_id))
    });
    for (i, c) in candidates.iter_mut().enumerate() {
        c.rank = i;
    }
}

/// Composite `= base01(s_base) · s_hn^λ`, re-sorted. Expects `s_hn` filled.
pub fn rerank(candidates: &[ScoredCandidate], kind: SimilarityKind, lambda_rr: f64) -> Result<Vec<ScoredCandidate>> {
    let mut out = candidates.to_vec();
    for c in &mut out {
        c.composite = rerank_score(base_unit_score(kind, c.s_base), c.s_hn, lambda_rr)?;
    }
    sort_by_composite(&mut out);
    Ok(out)
}

pub const CANDIDATE_HEADER: &str = "query_id\tdoc_id\ts_base\ts_hn\ts_fn\tcomposite\trank";

pub fn candidates_to_tsv(candidates: &[ScoredCandidate]) -> String {
    let mut out = String::from(CANDIDATE_HEADER);
    out.push('\n');
    for c in candidates {
        let _ = writeln!(
            out,
            "{}\t{}\t{:e}\t{:e}\t{:e}\t{:e}\t{}",
            c.query_id, c.doc_id, c.s_base, c.s_hn, c.s_fn, c.composite, c.rank
        );
    }
    out
}

pub fn candidates_from_tsv(text: &str, path: &Path) -> Result<Vec<ScoredCandidate>> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {msg}"),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line == CANDIDATE_HEADER || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(perr(i + 1, format!("expected 7 columns, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| perr(i + 1, e.to_string()));
        out.push(ScoredCandidate {
            query_id: f[0].to_string(),
            doc_id: f[1].to_string(),
            s_base: num(f[2])?,
            s_hn: num(f[3])?,
            s_fn: num(f[4])?,
            composite: num(f[5])?,
            rank: f[6]
                .parse()
                .map_err(|e: std::num::ParseIntError| perr(i + 1, e.to_string()))?,
        });
    }
    Ok(out)
}

pub fn write_candidates(path: &Path, candidates: &[ScoredCandidate]) -> Result<()> {
    write_atomic(path, candidates_to_tsv(candidates).as_bytes())
}

pub fn read_candidates(path: &Path) -> Result<Vec<ScoredCandidate>> {
    candidates_from_tsv(&read_to_string(path)?, path)
}

/// Class probabilities alongside each candidate, `(TP, FN, FP, TN)` order.
pub fn write_class_probabilities(
    path: &Path,
    candidates: &[ScoredCandidate],
    probs: &[[f64; NUM_CLASSES]],
) -> Result<()> {
    if candidates.len() != probs.len() {
        return Err(Error::shape(
            "write_class_probabilities",
            &[candidates.len()],
            &[probs.len()],
        ));
    }
    let mut out = String::from("query_id\tdoc_id\tp_tp\tp_fn\tp_fp\tp_tn\n");
    for (c, p) in candidates.iter().zip(probs) {
        let _ = writeln!(
            out,
            "{}\t{}\t{:e}\t{:e}\t{:e}\t{:e}",
            c.query_id, c.doc_id, p[0], p[1], p[2], p[3]
        );
    }
    write_atomic(path, out.as_bytes())
}
