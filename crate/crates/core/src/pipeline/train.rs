use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Config, StageConfig};
use super::corpus::{Corpus, Split};
use super::model::{new_adapter, Model};
use crate::adapter::{norm_loss_evaluations, tape_norm_loss, Adapter};
use crate::derive_seed;
use crate::encoder::{similarity, tape_similarity, DualEncoder};
use crate::error::{Error, Result};
use crate::index_eval::{adapter_f1, build_index, majority_baseline, BruteForceIndex, F1Report, Qrels};
use crate::numkernel::{AdamWState, ParamGrads, ParamId, Tape, Tensor, Var};
use crate::sampling::{baseline_sample, mine_hard_negatives, resample, score_pair, SamplerKind, ScoredCandidate};
use crate::supervision::{
    class_weights, derive_outcome, label_counts, tape_contrastive_bce, tape_directional_loss, tape_weighted_ce,
    ClassWeights, OutcomeLabel,
};

/// Losses above this (or non-finite) abort training.
pub const ABORT_LOSS: f64 = 1e4;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub stage: u32,
    /// Mean loss per optimizer step.
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    /// Queries whose resampling fell back to uniform.
    pub fallback_events: usize,
    /// Linear-norm evaluations during the run.
    pub norm_loss_evaluations: usize,
}

/// Pre-tokenised corpus text.
#[derive(Debug, Clone)]
pub struct TokenCache {
    docs: HashMap<String, Vec<usize>>,
    queries: HashMap<String, Vec<usize>>,
}

impl TokenCache {
    pub fn new(encoder: &DualEncoder, corpus: &Corpus) -> Result<Self> {
        let tok = |id: &str, text: &str, kind: &str| {
            encoder
                .tokenize(text)
                .map(|t| (id.to_string(), t))
                .map_err(|e| Error::Data(format!("{kind} {id}: {e}")))
        };
        Ok(TokenCache {
            docs: corpus
                .documents
                .iter()
                .map(|d| tok(&d.id, &d.text, "document"))
                .collect::<Result<_>>()?,
            queries: corpus
                .queries
                .iter()
                .map(|q| tok(&q.id, &q.text, "query"))
                .collect::<Result<_>>()?,
        })
    }

    pub fn doc(&self, id: &str) -> &[usize] {
        &self.docs[id]
    }

    pub fn query(&self, id: &str) -> &[usize] {
        &self.queries[id]
    }
}

/// `(query_id, positive_doc_id)` for every judged pair of the split.
pub fn positive_pairs(corpus: &Corpus, split: Split) -> Vec<(String, String)> {
    corpus
        .qrels
        .iter()
        .filter(|r| r.relevance > 0 && corpus.splits.get(&r.query_id) == Some(&split))
        .map(|r| (r.query_id.clone(), r.doc_id.clone()))
        .collect()
}

pub fn encode_corpus(encoder: &DualEncoder, corpus: &Corpus) -> Result<BruteForceIndex> {
    build_index(&corpus.doc_pairs(), encoder).map_err(|e| Error::Data(e.to_string()))
}

pub fn encode_queries(encoder: &DualEncoder, tokens: &TokenCache, ids: &[String]) -> Result<Vec<Vec<f32>>> {
    ids.par_iter().map(|q| encoder.encode_tokens(tokens.query(q))).collect()
}

fn check_loss(stage: &'static str, epoch: usize, batch: usize, loss: f64, ids: &[(String, String)]) -> Result<()> {
    if loss.is_finite() && loss <= ABORT_LOSS {
        return Ok(());
    }
    Err(Error::NumericalAbort {
        stage,
        epoch,
        batch,
        loss,
        query_ids: ids.iter().map(|(q, _)| q.clone()).collect(),
    })
}

fn shuffled<T: Clone>(items: &[T], seed: u64, epoch: usize) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        "shuffle",
        epoch as u64,
    )));
    v
}

/// State for the adapter-guided part of joint training.
struct JointContext {
    adapter_branch: bool,
    weights: ClassWeights,
    pools: HashMap<String, Vec<ScoredCandidate>>,
}

/// Taped loss of one micro-batch: in-batch BCE, hard negatives for each
/// query, and optionally the adapter objective.
fn micro_batch(
    cfg: &Config,
    model: &Model,
    tokens: &TokenCache,
    batch: &[(String, String)],
    rel: &Qrels,
    negatives: &HashMap<String, Vec<String>>,
    joint: Option<&JointContext>,
) -> Result<(f64, ParamGrads)> {
    let kind = model.encoder.similarity;
    let mut tape = Tape::new();
    let enc = model.encoder.bind(&mut tape);
    let branch = joint.filter(|j| j.adapter_branch);
    let adapter = match (branch, &model.adapter) {
        (Some(_), Some(a)) => Some(a.bind(&mut tape)),
        (Some(_), None) => return Err(Error::Config("adapter objective without an adapter".into())),
        _ => None,
    };

    let q: Vec<Var> = batch
        .iter()
        .map(|(qid, _)| enc.encode(&mut tape, tokens.query(qid)))
        .collect::<Result<_>>()?;
    let d: Vec<Var> = batch
        .iter()
        .map(|(_, did)| enc.encode(&mut tape, tokens.doc(did)))
        .collect::<Result<_>>()?;

    let mut terms = Vec::with_capacity(batch.len() * batch.len());
    let mut adapter_pairs: Vec<(Var, Var, f64, bool)> = Vec::new();
    for (i, (qid, _)) in batch.iter().enumerate() {
        let relevant = rel.get(qid);
        for (j, (_, did)) in batch.iter().enumerate() {
            let s = tape_similarity(&mut tape, kind, q[i], d[j])?;
            let y = relevant.is_some_and(|r| r.contains(did));
            terms.push((s, if y { 1.0 } else { 0.0 }));
            if i == j {
                adapter_pairs.push((q[i], d[j], tape.scalar(s), true));
            }
        }
        for nid in negatives.get(qid).map(Vec::as_slice).unwrap_or_default() {
            let n = enc.encode(&mut tape, tokens.doc(nid))?;
            let s = tape_similarity(&mut tape, kind, q[i], n)?;
            terms.push((s, 0.0));
            adapter_pairs.push((q[i], n, tape.scalar(s), false));
        }
    }
    let mut loss = tape_contrastive_bce(&mut tape, &terms)?;

    if let (Some(ad), Some(j)) = (adapter, branch) {
        let sup = &cfg.supervision;
        let mut per_pair = Vec::with_capacity(adapter_pairs.len());
        for &(qv, cv, s, gold) in &adapter_pairs {
            let label = derive_outcome(gold, s, sup.tau);
            let vars = ad.forward(&mut tape, qv, cv)?;
            let mut term = tape_weighted_ce(&mut tape, vars.logits, label, &j.weights)?;
            if sup.dir_weight > 0.0 {
                let dir = tape_directional_loss(&mut tape, vars.a, qv, cv, label, sup.dir_weight)?;
                term = tape.add(term, dir)?;
            }
            per_pair.push(term);
        }
        let l_a = tape.mean(&per_pair)?;
        let scaled = tape.scale(l_a, sup.lambda);
        loss = tape.add(loss, scaled)?;
    }

    let value = tape.scalar(loss);
    let grads = tape.backward(loss)?.into_params();
    Ok((value, grads))
}

/// Chooses this epoch's hard negatives for every training query.
#[allow(clippy::too_many_arguments)]
fn select_negatives(
    cfg: &Config,
    model: &Model,
    tokens: &TokenCache,
    corpus: &Corpus,
    joint: &JointContext,
    rel: &Qrels,
    epoch: usize,
    log: &mut TrainLog,
) -> Result<HashMap<String, Vec<String>>> {
    let m = cfg.sampling.m;
    let mut qids: Vec<&String> = joint.pools.keys().collect();
    qids.sort();
    let epoch_seed = derive_seed(cfg.seed, "resample", epoch as u64);
    let sampler = cfg.sampling.sampler;

    let (index, adapter) = match sampler {
        SamplerKind::Rrra => {
            let a = model
                .adapter
                .as_ref()
                .ok_or_else(|| Error::Config("adapter-guided sampling needs an adapter".into()))?;
            (Some(encode_corpus(&model.encoder, corpus)?), Some(a))
        }
        _ => (None, None),
    };
    let all_docs: Vec<ScoredCandidate> = match sampler {
        SamplerKind::Random => corpus
            .documents
            .iter()
            .map(|d| ScoredCandidate {
                query_id: String::new(),
                doc_id: d.id.clone(),
                s_base: 0.0,
                s_hn: 0.0,
                s_fn: 0.0,
                composite: 0.0,
                rank: 0,
            })
            .collect(),
        _ => Vec::new(),
    };

    let results: Vec<(String, Vec<String>, bool)> = qids
        .par_iter()
        .enumerate()
        .map(|(qi, qid)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(epoch_seed, "query", qi as u64));
            let pool = &joint.pools[*qid];
            let chosen = match sampler {
                SamplerKind::Rrra => {
                    let (index, adapter) = (index.as_ref().unwrap(), adapter.unwrap());
                    let qv = model.encoder.encode_tokens(tokens.query(qid))?;
                    let mut cands = pool.clone();
                    for c in &mut cands {
                        let row = index.row_of(&c.doc_id).expect("pool docs are indexed");
                        let s = score_pair(&qv, index.embedding(row), adapter)?;
                        c.s_hn = s.s_hn;
                        c.s_fn = s.s_fn;
                    }
                    let fallback = cands
                        .iter()
                        .all(|c| c.s_hn * (1.0 - c.s_fn).powf(cfg.sampling.gamma_rs) == 0.0);
                    let picked = resample(
                        &cands,
                        cfg.sampling.gamma_rs,
                        m.min(cands.len()),
                        cfg.sampling.mode,
                        &mut rng,
                    )?;
                    return Ok(((*qid).clone(), picked.into_iter().map(|c| c.doc_id).collect(), fallback));
                }
                SamplerKind::Topk => baseline_sample(SamplerKind::Topk, pool, m.min(pool.len()), &mut rng)?,
                SamplerKind::Random => {
                    let gold = rel.get(*qid);
                    let free: Vec<ScoredCandidate> = all_docs
                        .iter()
                        .filter(|c| !gold.is_some_and(|g| g.contains(&c.doc_id)))
                        .cloned()
                        .collect();
                    baseline_sample(SamplerKind::Random, &free, m.min(free.len()), &mut rng)?
                }
            };
            Ok(((*qid).clone(), chosen.into_iter().map(|c| c.doc_id).collect(), false))
        })
        .collect::<Result<_>>()?;

    let mut out = HashMap::new();
    for (q, docs, fallback) in results {
        log.fallback_events += fallback as usize;
        out.insert(q, docs);
    }
    Ok(out)
}

/// Shared encoder training loop. Without a joint context this is plain
/// in-batch contrastive training.
#[allow(clippy::too_many_arguments)]
fn encoder_loop(
    stage_name: &'static str,
    stage: u32,
    cfg: &Config,
    sc: &StageConfig,
    corpus: &Corpus,
    tokens: &TokenCache,
    model: &mut Model,
    joint: Option<&JointContext>,
) -> Result<TrainLog> {
    let pairs = positive_pairs(corpus, Split::Train);
    if pairs.is_empty() {
        return Err(Error::Data("training split has no judged queries".into()));
    }
    let rel = corpus.relevant();
    let mut opt = AdamWState::new(sc.adamw());
    let mut log = TrainLog {
        stage,
        ..Default::default()
    };
    let norm_before = norm_loss_evaluations();
    let update_adapter = joint.is_some_and(|j| j.adapter_branch);
    let use_negatives = joint.is_some_and(|_| cfg.sampling.m > 0);

    for epoch in 0..sc.epochs {
        let negatives = match joint {
            Some(j) if use_negatives => select_negatives(cfg, model, tokens, corpus, j, &rel, epoch, &mut log)?,
            _ => HashMap::new(),
        };
        let order = shuffled(&pairs, cfg.seed, epoch);
        let mut epoch_total = 0.0;
        let mut epoch_steps = 0;
        for (step, group) in order.chunks(sc.batch_size * sc.grad_accum).enumerate() {
            let mut acc = ParamGrads::default();
            let mut loss_sum = 0.0;
            let micro: Vec<_> = group.chunks(sc.batch_size).collect();
            for (mi, mb) in micro.iter().enumerate() {
                let (loss, grads) = micro_batch(cfg, model, tokens, mb, &rel, &negatives, joint)?;
                check_loss(stage_name, epoch, step * sc.grad_accum + mi, loss, mb)?;
                acc.accumulate(&grads);
                loss_sum += loss;
            }
            acc.scale(1.0 / micro.len() as f64);
            if !acc.is_finite() {
                return Err(Error::NumericalAbort {
                    stage: stage_name,
                    epoch,
                    batch: step,
                    loss: f64::NAN,
                    query_ids: group.iter().map(|(q, _)| q.clone()).collect(),
                });
            }
            let mean = loss_sum / micro.len() as f64;
            log.step_losses.push(mean);
            epoch_total += mean;
            epoch_steps += 1;

            let mut params = trainable_params(model, update_adapter);
            opt.step(&mut params, &acc)?;
        }
        log.epoch_losses.push(epoch_total / epoch_steps as f64);
    }
    log.norm_loss_evaluations = norm_loss_evaluations() - norm_before;
    Ok(log)
}

fn trainable_params(model: &mut Model, with_adapter: bool) -> Vec<(ParamId, &mut Tensor)> {
    let use_projection = model.encoder.use_projection;
    let Model { encoder, adapter } = model;
    let mut p = encoder.params_mut();
    if !use_projection {
        p.truncate(1);
    }
    if with_adapter {
        if let Some(a) = adapter {
            p.extend(a.params_mut());
        }
    }
    p
}

/// Stage 1: in-batch contrastive training from a fresh encoder.
pub fn stage1_pretrain(cfg: &Config, corpus: &Corpus) -> Result<(Model, TrainLog)> {
    let mut model = Model::init(cfg)?;
    let log = continue_contrastive(cfg, &cfg.stage1, corpus, &mut model)?;
    Ok((model, log))
}

/// In-batch contrastive training of an existing encoder.
pub fn continue_contrastive(cfg: &Config, sc: &StageConfig, corpus: &Corpus, model: &mut Model) -> Result<TrainLog> {
    let tokens = TokenCache::new(&model.encoder, corpus)?;
    encoder_loop("stage1", 1, cfg, sc, corpus, &tokens, model, None)
}

/// Mean in-batch loss over the training pairs in fixed order, no updates.
pub fn contrastive_train_loss(cfg: &Config, corpus: &Corpus, model: &Model) -> Result<f64> {
    let tokens = TokenCache::new(&model.encoder, corpus)?;
    let pairs = positive_pairs(corpus, Split::Train);
    if pairs.is_empty() {
        return Err(Error::Data("training split has no judged queries".into()));
    }
    let rel = corpus.relevant();
    let none = HashMap::new();
    let mut total = 0.0;
    let chunks: Vec<_> = pairs.chunks(cfg.stage1.batch_size).collect();
    for mb in &chunks {
        total += micro_batch(cfg, model, &tokens, mb, &rel, &none, None)?.0;
    }
    Ok(total / chunks.len() as f64)
}

/// One adapter-training example.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterPair {
    pub query_id: String,
    pub doc_id: String,
    pub q: Vec<f32>,
    pub c: Vec<f32>,
    pub score: f64,
    pub gold: bool,
    pub label: OutcomeLabel,
}

/// Each judged pair of the split plus `neg_ratio` negatives drawn uniformly
/// from the query's mined pool, labelled from the frozen encoder's scores.
pub fn build_adapter_pairs(
    cfg: &Config,
    corpus: &Corpus,
    encoder: &DualEncoder,
    index: &BruteForceIndex,
    split: Split,
) -> Result<Vec<AdapterPair>> {
    let tokens = TokenCache::new(encoder, corpus)?;
    let rel = corpus.relevant();
    let pairs = positive_pairs(corpus, split);
    let tag = format!("adapter-pairs-{split}");
    let per_query: Vec<Vec<AdapterPair>> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (qid, did))| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &tag, i as u64));
            let q = encoder.encode_tokens(tokens.query(qid))?;
            let gold: HashSet<String> = rel.get(qid).cloned().unwrap_or_default();
            let pool = mine_hard_negatives(index, qid, &q, cfg.sampling.pool_k, &gold)?;
            let n = cfg.supervision.neg_ratio.min(pool.len());
            let negs = baseline_sample(SamplerKind::Random, &pool, n, &mut rng)?;
            let mut out = Vec::with_capacity(n + 1);
            let docs = std::iter::once((did.clone(), true)).chain(negs.into_iter().map(|c| (c.doc_id, false)));
            for (doc_id, is_gold) in docs {
                let row = index
                    .row_of(&doc_id)
                    .ok_or_else(|| Error::Data(format!("qrels reference unknown doc {doc_id}")))?;
                let c = index.embedding(row).to_vec();
                let score = similarity(encoder.similarity, &q, &c)?;
                out.push(AdapterPair {
                    query_id: qid.clone(),
                    doc_id,
                    label: derive_outcome(is_gold, score, cfg.supervision.tau),
                    q: q.clone(),
                    c,
                    score,
                    gold: is_gold,
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_query.into_iter().flatten().collect())
}

/// Adapter objective over a batch with a frozen encoder: weighted CE, plus
/// the linear-norm and directional terms when enabled.
fn adapter_batch_loss(
    cfg: &Config,
    adapter: &Adapter,
    batch: &[&AdapterPair],
    weights: &ClassWeights,
) -> Result<(f64, f64, ParamGrads)> {
    let mut tape = Tape::new();
    let ad = adapter.bind(&mut tape);
    let mut ce_terms = Vec::with_capacity(batch.len());
    let mut dir_terms = Vec::new();
    let mut triples = Vec::new();
    for p in batch {
        let q = tape.vector_f32(&p.q);
        let c = tape.vector_f32(&p.c);
        let vars = ad.forward(&mut tape, q, c)?;
        ce_terms.push(tape_weighted_ce(&mut tape, vars.logits, p.label, weights)?);
        if cfg.supervision.dir_weight > 0.0 {
            dir_terms.push(tape_directional_loss(
                &mut tape,
                vars.a,
                q,
                c,
                p.label,
                cfg.supervision.dir_weight,
            )?);
        }
        triples.push((vars.a, q, c));
    }
    let ce = tape.mean(&ce_terms)?;
    let ce_value = tape.scalar(ce);
    let mut loss = ce;
    if cfg.adapter.use_linear_norm {
        let norm = tape_norm_loss(&mut tape, &triples)?;
        loss = tape.add(loss, norm)?;
    }
    if !dir_terms.is_empty() {
        let dir = tape.mean(&dir_terms)?;
        loss = tape.add(loss, dir)?;
    }
    let value = tape.scalar(loss);
    Ok((value, ce_value, tape.backward(loss)?.into_params()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Report {
    pub log: TrainLog,
    /// Mean classification loss of the first batch before any update.
    pub initial_ce: f64,
    pub class_counts: [u64; 4],
    pub class_weights: ClassWeights,
    pub heldout: F1Report,
    pub heldout_baseline: F1Report,
    pub train: F1Report,
    pub heldout_pairs: usize,
}

pub fn predict_labels(adapter: &Adapter, pairs: &[AdapterPair]) -> Result<Vec<OutcomeLabel>> {
    pairs
        .par_iter()
        .map(|p| {
            let out = adapter.adapt(&p.q, &p.c)?;
            Ok(OutcomeLabel::from_index(out.predicted_class()).expect("four classes"))
        })
        .collect()
}

/// Stage 2: trains a fresh adapter on pairs mined with the frozen encoder.
pub fn stage2_train_adapter(cfg: &Config, corpus: &Corpus, mut model: Model) -> Result<(Model, Stage2Report)> {
    let index = encode_corpus(&model.encoder, corpus)?;
    let train = build_adapter_pairs(cfg, corpus, &model.encoder, &index, Split::Train)?;
    let heldout = build_adapter_pairs(cfg, corpus, &model.encoder, &index, Split::Dev)?;
    if train.is_empty() {
        return Err(Error::Data("no adapter training pairs".into()));
    }
    let labels: Vec<OutcomeLabel> = train.iter().map(|p| p.label).collect();
    let counts = label_counts(&labels);
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        log::warn!("adapter training labels cover a single class: {counts:?}");
    }
    let weights = class_weights(&counts, cfg.supervision.gamma_imb)?;

    let mut adapter = new_adapter(cfg)?;
    let sc = &cfg.stage2;
    let mut opt = AdamWState::new(sc.adamw());
    let mut log = TrainLog {
        stage: 2,
        ..Default::default()
    };
    let norm_before = norm_loss_evaluations();
    let mut initial_ce = f64::NAN;
    let idx: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..sc.epochs {
        let order = shuffled(&idx, derive_seed(cfg.seed, "stage2", 0), epoch);
        let mut total = 0.0;
        let mut steps = 0;
        for (step, group) in order.chunks(sc.batch_size * sc.grad_accum).enumerate() {
            let mut acc = ParamGrads::default();
            let mut loss_sum = 0.0;
            let micro: Vec<_> = group.chunks(sc.batch_size).collect();
            for mb in &micro {
                let batch: Vec<&AdapterPair> = mb.iter().map(|&i| &train[i]).collect();
                let (loss, ce, grads) = adapter_batch_loss(cfg, &adapter, &batch, &weights)?;
                if initial_ce.is_nan() {
                    initial_ce = ce;
                }
                let ids: Vec<(String, String)> = batch.iter().map(|p| (p.query_id.clone(), p.doc_id.clone())).collect();
                check_loss("stage2", epoch, step, loss, &ids)?;
                acc.accumulate(&grads);
                loss_sum += loss;
            }
            acc.scale(1.0 / micro.len() as f64);
            let mean = loss_sum / micro.len() as f64;
            log.step_losses.push(mean);
            total += mean;
            steps += 1;
            opt.step(&mut adapter.params_mut(), &acc)?;
        }
        log.epoch_losses.push(total / steps as f64);
    }
    log.norm_loss_evaluations = norm_loss_evaluations() - norm_before;

    let train_pred = predict_labels(&adapter, &train)?;
    let train_report = adapter_f1(&train_pred, &labels)?;
    let (heldout_report, baseline) = if heldout.is_empty() {
        (train_report.clone(), majority_baseline(&labels)?)
    } else {
        let gold: Vec<OutcomeLabel> = heldout.iter().map(|p| p.label).collect();
        let pred = predict_labels(&adapter, &heldout)?;
        (adapter_f1(&pred, &gold)?, majority_baseline(&gold)?)
    };
    model.adapter = Some(adapter);
    Ok((
        model,
        Stage2Report {
            log,
            initial_ce,
            class_counts: counts,
            class_weights: weights,
            heldout: heldout_report,
            heldout_baseline: baseline,
            train: train_report,
            heldout_pairs: heldout.len(),
        },
    ))
}

/// Stage 3: joint fine-tuning of encoder and adapter with adapter-guided
/// hard negatives. The mining pool is built once from the incoming encoder.
pub fn stage3_joint_finetune(cfg: &Config, corpus: &Corpus, mut model: Model) -> Result<(Model, TrainLog)> {
    if model.adapter.is_none() {
        return Err(Error::Config(
            "joint fine-tuning needs a checkpoint with an adapter".into(),
        ));
    }
    let tokens = TokenCache::new(&model.encoder, corpus)?;
    let adapter_branch = cfg.supervision.lambda > 0.0;
    let rel = corpus.relevant();

    let mut pools = HashMap::new();
    let mut counts = [0u64; 4];
    let needs_pool = cfg.sampling.m > 0 || adapter_branch;
    if needs_pool {
        let index = encode_corpus(&model.encoder, corpus)?;
        let qids: Vec<String> = {
            let mut v: Vec<String> = positive_pairs(corpus, Split::Train)
                .into_iter()
                .map(|(q, _)| q)
                .collect();
            v.dedup();
            v
        };
        let q_emb = encode_queries(&model.encoder, &tokens, &qids)?;
        for (qid, q) in qids.iter().zip(&q_emb) {
            let gold = rel.get(qid).cloned().unwrap_or_default();
            let pool = mine_hard_negatives(&index, qid, q, cfg.sampling.pool_k, &gold)?;
            for g in &gold {
                if let Some(r) = index.row_of(g) {
                    let s = similarity(model.encoder.similarity, q, index.embedding(r))?;
                    counts[derive_outcome(true, s, cfg.supervision.tau).index()] += 1;
                }
            }
            for c in &pool {
                counts[derive_outcome(false, c.s_base, cfg.supervision.tau).index()] += 1;
            }
            pools.insert(qid.clone(), pool);
        }
    }
    let weights = if adapter_branch {
        class_weights(&counts, cfg.supervision.gamma_imb)?
    } else {
        ClassWeights::uniform()
    };
    let joint = JointContext {
        adapter_branch,
        weights,
        pools,
    };
    let log = encoder_loop("stage3", 3, cfg, &cfg.stage3, corpus, &tokens, &mut model, Some(&joint))?;
    Ok((model, log))
}
