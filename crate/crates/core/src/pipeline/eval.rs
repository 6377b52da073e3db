use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Config;
use super::corpus::{Corpus, Split};
use super::model::Model;
use super::train::{encode_corpus, encode_queries, TokenCache};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::index_eval::{
    gradient_profile, recall_at_k, with_oracle_recall, EvalReport, GradientProfile, ProfileCandidate, ProfileQuery,
};
use crate::sampling::{mine_hard_negatives, rerank, resample_inclusion, score_candidates, SamplerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Base,
    Rerank,
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalMode::Base => "base",
            EvalMode::Rerank => "rerank",
        })
    }
}

/// Ranked doc ids per query of `split`, optionally reranked by the adapter.
pub fn rank_split(
    cfg: &Config,
    corpus: &Corpus,
    model: &Model,
    mode: EvalMode,
    split: Split,
) -> Result<Vec<(String, Vec<String>)>> {
    let adapter = match mode {
        EvalMode::Base => None,
        EvalMode::Rerank => Some(
            model
                .adapter
                .as_ref()
                .ok_or_else(|| Error::Config("reranking needs a checkpoint with an adapter".into()))?,
        ),
    };
    let tokens = TokenCache::new(&model.encoder, corpus)?;
    let index = encode_corpus(&model.encoder, corpus)?;
    let ids: Vec<String> = corpus.split_queries(split).into_iter().map(|q| q.id.clone()).collect();
    let embs = encode_queries(&model.encoder, &tokens, &ids)?;
    let depth = cfg.eval.ks.iter().copied().max().unwrap_or(1);
    let kind = model.encoder.similarity;

    ids.par_iter()
        .zip(&embs)
        .map(|(qid, q)| {
            let hits = index.search(q, depth.max(cfg.sampling.rerank_depth))?;
            let mut docs: Vec<String> = hits.iter().map(|h| h.doc_id.clone()).collect();
            if let Some(adapter) = adapter {
                let n = cfg.sampling.rerank_depth.min(hits.len());
                let mut cands = mine_hard_negatives(&index, qid, q, n, &HashSet::new())?;
                score_candidates(&index, q, &mut cands, adapter)?;
                let reranked = rerank(&cands, kind, cfg.sampling.lambda_rr)?;
                for (slot, c) in docs.iter_mut().zip(reranked) {
                    *slot = c.doc_id;
                }
            }
            docs.truncate(depth);
            Ok((qid.clone(), docs))
        })
        .collect()
}

/// Recall@k (and oracle recall over hidden positives) for one split.
pub fn run_eval(cfg: &Config, corpus: &Corpus, model: &Model, mode: EvalMode, split: Split) -> Result<EvalReport> {
    let ranked = rank_split(cfg, corpus, model, mode, split)?;
    let qrels = corpus.relevant();
    let mut report = recall_at_k(&ranked, &qrels, &cfg.eval.ks)?;
    if !corpus.hidden_qrels.is_empty() {
        report = with_oracle_recall(report, &ranked, &qrels, &corpus.hidden(), &cfg.eval.ks);
    }
    let meta = &mut report.metadata;
    meta.insert("config_hash".into(), format!("{:016x}", cfg.hash()));
    meta.insert("seed".into(), cfg.seed.to_string());
    meta.insert("mode".into(), mode.to_string());
    meta.insert("split".into(), split.to_string());
    meta.insert("lambda_rr".into(), cfg.sampling.lambda_rr.to_string());
    meta.insert("similarity".into(), model.encoder.similarity.to_string());
    Ok(report)
}

/// Gradient-magnitude profile of the negatives a sampler would pick, over
/// the first `eval.profile_queries` training queries.
pub fn run_grad_profile(cfg: &Config, corpus: &Corpus, model: &Model, sampler: SamplerKind) -> Result<GradientProfile> {
    let tokens = TokenCache::new(&model.encoder, corpus)?;
    let index = encode_corpus(&model.encoder, corpus)?;
    let rel = corpus.relevant();
    let ids: Vec<String> = corpus
        .split_queries(Split::Train)
        .into_iter()
        .take(cfg.eval.profile_queries)
        .map(|q| q.id.clone())
        .collect();
    let embs = encode_queries(&model.encoder, &tokens, &ids)?;
    let adapter = match sampler {
        SamplerKind::Rrra => Some(
            model
                .adapter
                .as_ref()
                .ok_or_else(|| Error::Config("rrra profile needs a checkpoint with an adapter".into()))?,
        ),
        _ => None,
    };
    let m = cfg.sampling.m;

    let queries: Vec<ProfileQuery> = ids
        .par_iter()
        .zip(&embs)
        .enumerate()
        .map(|(qi, (qid, q))| {
            let gold = rel.get(qid).cloned().unwrap_or_default();
            let cands = mine_hard_negatives(&index, qid, q, cfg.eval.profile_candidates, &gold)?;
            let n = cands.len();
            let weights: Vec<f64> = match sampler {
                SamplerKind::Random => vec![m.min(n) as f64 / n as f64; n],
                SamplerKind::Topk => (0..n).map(|r| if r < m { 1.0 } else { 0.0 }).collect(),
                SamplerKind::Rrra => {
                    let k = cfg.sampling.pool_k.min(n);
                    let mut pool = cands[..k].to_vec();
                    score_candidates(&index, q, &mut pool, adapter.expect("checked above"))?;
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "profile", qi as u64));
                    let mut w = resample_inclusion(
                        &pool,
                        cfg.sampling.gamma_rs,
                        m,
                        cfg.sampling.mode,
                        cfg.eval.profile_trials,
                        &mut rng,
                    )?;
                    w.resize(n, 0.0);
                    w
                }
            };
            Ok(ProfileQuery {
                embedding: q.clone(),
                candidates: cands
                    .iter()
                    .zip(weights)
                    .map(|(c, weight)| ProfileCandidate {
                        rank: c.rank,
                        embedding: index.embedding(index.row_of(&c.doc_id).expect("indexed")).to_vec(),
                        weight,
                    })
                    .collect(),
            })
        })
        .collect::<Result<_>>()?;
    gradient_profile(model.encoder.similarity, &queries, &sampler.to_string())
}
