//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line each, and exits non-zero if any failed.

mod common;

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{alpha_grid_min, away_from_zero, fd_check, fd_check_against, rng, ulps, uniform_vec, Input};
use rrra_core::adapter::{norm_loss_batch, project_alpha, tape_norm_loss, BoundAdapter, NUM_CLASSES};
use rrra_core::encoder::{DualEncoder, EncoderConfig, EMBEDDING, PROJECTION};
use rrra_core::index_eval::{adapter_f1, pair_gradient_norm, qrels_from_pairs, recall_at_k, EvalReport};
use rrra_core::numkernel::gradcheck::{max_relative_error, numeric_gradient_f32};
use rrra_core::numkernel::{sigmoid, Tape, Var};
use rrra_core::pipeline::{
    generate_synthetic, run_ablation, run_eval, run_grad_profile, stage1_pretrain, stage2_train_adapter,
    stage3_joint_finetune, Checkpoint, Config, EvalMode, Model, Split,
};
use rrra_core::sampling::{rerank, rerank_score, resample, resample_score, ScoredCandidate};
use rrra_core::supervision::{
    class_weights, contrastive_bce, tape_contrastive_bce, tape_weighted_ce, weighted_ce, OutcomeLabel,
};
use rrra_core::{SamplerKind, SamplingMode, SimilarityKind};

const REFERENCE: &str = include_str!("../../../configs/reference.toml");
const SEEDS: [u64; 5] = [42, 43, 44, 45, 46];

/// Every evaluation report produced along the way, for the monotonicity check.
static REPORTS: Mutex<Vec<EvalReport>> = Mutex::new(Vec::new());

fn reference() -> Config {
    Config::from_toml(REFERENCE).expect("reference config parses")
}

fn keep(report: &EvalReport) {
    REPORTS.lock().unwrap().push(report.clone());
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

const FD_TOL: f64 = 1e-4;
const FD_CONFIGS: u64 = 120;

fn readout(tape: &mut Tape<'_>, x: Var, r: Var) -> rrra_core::Result<Var> {
    let t = tape.tanh(x);
    tape.dot(t, r)
}

/// Max relative error per operation family for one random configuration.
fn gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut g = rng(seed);
    let d = g.random_range(1..=8usize);
    let m = g.random_range(1..=6usize);
    let mut out = Vec::new();
    let v = |g: &mut ChaCha8Rng, n| Input::vector(uniform_vec(g, n, 1.0));

    let w = Input::matrix(m, d, uniform_vec(&mut g, m * d, 1.0));
    let ins = [w, v(&mut g, d), v(&mut g, m), v(&mut g, m)];
    let e = fd_check(&ins, |t, x| {
        let y = t.affine(x[0], x[1], x[2])?;
        readout(t, y, x[3])
    });
    out.push(("matvec/affine", e.unwrap()));

    let ins = [v(&mut g, d), v(&mut g, d), v(&mut g, d)];
    let e = fd_check(&ins, |t, x| {
        let s = t.add(x[0], x[1])?;
        let dlt = t.sub(x[0], x[1])?;
        let p = t.mul(s, dlt)?;
        t.dot(p, x[2])
    });
    out.push(("add/sub/mul/dot", e.unwrap()));

    let ins = [Input::vector(away_from_zero(&mut g, d, 2.0, 0.05)), v(&mut g, d)];
    let e = fd_check(&ins, |t, x| {
        let a = t.relu(x[0]);
        let b = t.sigmoid(x[0]);
        let c = t.tanh(x[0]);
        let (a, b, c) = (t.dot(a, x[1])?, t.dot(b, x[1])?, t.squared_norm(c));
        t.sum(&[a, b, c])
    });
    out.push(("relu/sigmoid/tanh/sum", e.unwrap()));

    let k = g.random_range(-2.0..2.0);
    let ins = [v(&mut g, d), v(&mut g, d), v(&mut g, 2 * d), v(&mut g, d)];
    let e = fd_check(&ins, |t, x| {
        let cat = t.concat(&[x[0], x[1]])?;
        let a = t.dot(cat, x[2])?;
        let sc = t.scale(x[0], k);
        let b = t.dot(sc, x[1])?;
        let c = t.squared_norm(x[3]);
        t.mean(&[a, b, c])
    });
    out.push(("concat/scale/mean/squared_norm", e.unwrap()));

    let ins = [
        Input::vector(away_from_zero(&mut g, d, 1.0, 0.2)),
        Input::vector(away_from_zero(&mut g, d, 1.0, 0.2)),
    ];
    let y = if g.random_bool(0.5) { 1.0 } else { 0.0 };
    let e = fd_check(&ins, |t, x| {
        let c = t.cosine(x[0], x[1])?;
        let s = t.dot(x[0], x[1])?;
        let l = t.bce_with_logits(s, y)?;
        let sc = t.scale(c, 3.0);
        t.add(sc, l)
    });
    out.push(("cosine/bce_with_logits", e.unwrap()));

    let alpha = g.random_range(0.0..=1.0);
    let ins = [v(&mut g, d), v(&mut g, d), v(&mut g, d)];
    let e = fd_check(&ins, |t, x| t.segment_residual(x[0], x[1], x[2], alpha));
    out.push(("segment_residual", e.unwrap()));

    // Embedding bag and projection, checked on the f32 parameter tensors.
    let cfg = EncoderConfig {
        dim: d,
        buckets: 8,
        init_scale: 0.5,
        ..Default::default()
    };
    let mut enc = DualEncoder::new(&cfg, &mut g).unwrap();
    for p in enc.projection.data_mut() {
        *p += g.random_range(-0.3f32..0.3);
    }
    let tokens: Vec<usize> = (0..g.random_range(1..6)).map(|_| g.random_range(0..8)).collect();
    let r = uniform_vec(&mut g, d, 1.0);
    let value = |enc: &DualEncoder| {
        let mut tape = Tape::new();
        let b = enc.bind(&mut tape);
        let y = b.encode(&mut tape, &tokens).unwrap();
        let rv = tape.vector(r.clone());
        let l = readout(&mut tape, y, rv).unwrap();
        let grads = tape.backward(l).unwrap();
        let ge = grads.param(EMBEDDING).unwrap().to_vec();
        let gp = grads.param(PROJECTION).unwrap().to_vec();
        (tape.scalar(l), ge, gp)
    };
    let (_, ge, gp) = value(&enc);
    let ne = numeric_gradient_f32(enc.embedding.data(), 1e-3, |x| {
        let mut e2 = enc.clone();
        e2.embedding.data_mut().copy_from_slice(x);
        value(&e2).0
    });
    let np = numeric_gradient_f32(enc.projection.data(), 1e-3, |x| {
        let mut e2 = enc.clone();
        e2.projection.data_mut().copy_from_slice(x);
        value(&e2).0
    });
    out.push((
        "embedding_bag_mean/projection",
        max_relative_error(&ge, &ne).max(max_relative_error(&gp, &np)),
    ));

    // Adapter forward through both heads, every parameter and both inputs.
    let h = g.random_range(1..=6usize);
    let use_residual = g.random_bool(0.5);
    let label = g.random_range(0..NUM_CLASSES);
    let cw = g.random_range(0.2..3.0);
    let ins = [
        v(&mut g, d),
        v(&mut g, d),
        Input::matrix(h, 3 * d, uniform_vec(&mut g, 3 * h * d, 1.0)),
        v(&mut g, h),
        Input::matrix(d, h, uniform_vec(&mut g, d * h, 1.0)),
        v(&mut g, d),
        Input::matrix(NUM_CLASSES, h, uniform_vec(&mut g, NUM_CLASSES * h, 1.0)),
        v(&mut g, NUM_CLASSES),
        v(&mut g, d),
    ];
    let e = fd_check(&ins, |t, x| {
        let ad = BoundAdapter {
            trunk_w: x[2],
            trunk_b: x[3],
            residual_w: x[4],
            residual_b: x[5],
            class_w: x[6],
            class_b: x[7],
            use_residual,
        };
        let vars = ad.forward(t, x[0], x[1])?;
        let la = t.dot(vars.a, x[8])?;
        let lc = t.weighted_ce(vars.logits, label, cw)?;
        t.add(la, lc)
    });
    out.push(("adapter forward", e.unwrap()));

    // Linear-norm loss: taped gradient against differences of the plain function.
    let n = g.random_range(1..=4usize);
    let ins: Vec<Input> = (0..3 * n).map(|_| v(&mut g, d)).collect();
    let e = fd_check_against(
        &ins,
        |t, x| {
            let triples: Vec<(Var, Var, Var)> = x.chunks(3).map(|c| (c[0], c[1], c[2])).collect();
            tape_norm_loss(t, &triples)
        },
        |vals| {
            let triples: Vec<(&[f64], &[f64], &[f64])> =
                vals.chunks(3).map(|c| (&c[0][..], &c[1][..], &c[2][..])).collect();
            norm_loss_batch(&triples).unwrap()
        },
    );
    out.push(("norm_loss_batch", e.unwrap()));

    let counts: [u64; NUM_CLASSES] = std::array::from_fn(|_| g.random_range(0..50));
    let weights = class_weights(
        &[counts[0] + 1, counts[1], counts[2], counts[3]],
        g.random_range(0.0..1.0),
    )
    .unwrap();
    let label = OutcomeLabel::from_index(g.random_range(0..NUM_CLASSES)).unwrap();
    let ins = [Input::vector(uniform_vec(&mut g, NUM_CLASSES, 4.0))];
    let e = fd_check_against(
        &ins,
        |t, x| tape_weighted_ce(t, x[0], label, &weights),
        |vals| weighted_ce(&[vals[0][0], vals[0][1], vals[0][2], vals[0][3]], label, &weights),
    );
    out.push(("weighted_ce", e.unwrap()));

    let n = g.random_range(1..=10usize);
    let labels: Vec<f64> = (0..n).map(|_| if g.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
    let ins: Vec<Input> = (0..n).map(|_| Input::vector(uniform_vec(&mut g, 1, 6.0))).collect();
    let e = fd_check_against(
        &ins,
        |t, x| {
            let pairs: Vec<(Var, f64)> = x.iter().copied().zip(labels.iter().copied()).collect();
            tape_contrastive_bce(t, &pairs)
        },
        |vals| {
            let s: Vec<f64> = vals.iter().map(|v| v[0]).collect();
            contrastive_bce(&s, &labels).unwrap()
        },
    );
    out.push(("contrastive_bce", e.unwrap()));
    out
}

fn criterion_1() -> Outcome {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for seed in 0..FD_CONFIGS {
        for (name, e) in gradient_errors(seed) {
            match worst.iter_mut().find(|(n, _)| *n == name) {
                Some(w) => w.1 = w.1.max(e),
                None => worst.push((name, e)),
            }
        }
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let bad: Vec<String> = worst
        .iter()
        .filter(|w| w.1.is_nan() || w.1 >= FD_TOL)
        .map(|(n, e)| format!("{n} {e:.2e}"))
        .collect();
    outcome(
        bad.is_empty(),
        format!(
            "{} op families x {FD_CONFIGS} configs, max rel err {max:.2e} (< {FD_TOL:.0e}){}",
            worst.len(),
            if bad.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", bad.join(", "))
            }
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Projection oracle

fn criterion_2() -> Outcome {
    let mut g = rng(2);
    let (mut worst, mut clamped, mut below_grid) = (0.0f64, 0, 0);
    for i in 0..1000 {
        let d = g.random_range(1..=8usize);
        let q = uniform_vec(&mut g, d, 0.5);
        let c = uniform_vec(&mut g, d, 0.5);
        // A third land past q, a third past c, the rest anywhere nearby.
        let t: f64 = match i % 3 {
            0 => g.random_range(1.05..2.0),
            1 => g.random_range(-1.0..-0.05),
            _ => g.random_range(-0.2..1.2),
        };
        let noise = uniform_vec(&mut g, d, 0.1);
        let a: Vec<f64> = (0..d).map(|j| t * q[j] + (1.0 - t) * c[j] + noise[j]).collect();
        let (alpha, loss) = project_alpha(&a, &q, &c).unwrap();
        let (_, grid) = alpha_grid_min(&a, &q, &c, 1e-3);
        if alpha == 0.0 || alpha == 1.0 {
            clamped += 1;
        }
        if loss > grid + 1e-12 {
            below_grid += 1;
        }
        worst = worst.max((loss - grid).abs());
    }
    outcome(
        worst <= 1e-6 && below_grid == 0,
        format!(
            "1000 triples ({clamped} clamped), max |closed - grid| {worst:.2e} (<= 1e-6), closed form never above grid"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Score-formula oracles

fn candidate(id: usize, s_base: f64, s_hn: f64) -> ScoredCandidate {
    ScoredCandidate {
        query_id: "q".into(),
        doc_id: format!("d{id:03}"),
        s_base,
        s_hn,
        s_fn: 0.0,
        composite: 0.0,
        rank: id,
    }
}

fn criterion_3() -> Outcome {
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let mut max_ulps = 0u64;
    for &e in &[0.5, 1.0, 2.0] {
        for &x in &grid {
            for &y in &grid {
                max_ulps = max_ulps.max(ulps(resample_score(x, y, e).unwrap(), common::resample_oracle(x, y, e)));
                max_ulps = max_ulps.max(ulps(rerank_score(x, y, e).unwrap(), common::rerank_oracle(x, y, e)));
            }
        }
    }
    let mut identity = true;
    for &x in &grid {
        for &y in &grid {
            identity &= resample_score(x, y, 0.0).unwrap() == x;
            identity &= rerank_score(x, y, 0.0).unwrap() == x;
        }
    }
    // λ = 0 leaves the base order untouched, whatever the adapter says.
    let mut g = rng(3);
    let mut permutation_kept = true;
    for trial in 0..50 {
        let cands: Vec<ScoredCandidate> = (0..40)
            .map(|i| candidate(i, g.random_range(-5.0..5.0), g.random_range(0.0..=1.0)))
            .collect();
        let kind = if trial % 2 == 0 {
            SimilarityKind::Dot
        } else {
            SimilarityKind::Cosine
        };
        let cands: Vec<ScoredCandidate> = cands
            .into_iter()
            .map(|mut c| {
                if kind == SimilarityKind::Cosine {
                    c.s_base /= 5.0;
                }
                c
            })
            .collect();
        let mut base = cands.clone();
        base.sort_by(|a, b| b.s_base.total_cmp(&a.s_base).then_with(|| a.doc_id.cmp(&b.doc_id)));
        let out = rerank(&cands, kind, 0.0).unwrap();
        permutation_kept &= out.iter().map(|c| &c.doc_id).eq(base.iter().map(|c| &c.doc_id));
    }
    outcome(
        max_ulps <= 1 && identity && permutation_kept,
        format!(
            "101x101x3 grid max {max_ulps} ulp (<= 1); gamma/lambda = 0 identity {identity}; lambda = 0 keeps base order {permutation_kept}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. Resampling distribution

fn criterion_4() -> Outcome {
    let target = [0.7, 0.2, 0.1];
    let cands: Vec<ScoredCandidate> = target.iter().enumerate().map(|(i, &s)| candidate(i, 0.0, s)).collect();
    let mut g = ChaCha8Rng::seed_from_u64(4);
    let draws = 100_000;
    let mut counts = [0usize; 3];
    for _ in 0..draws {
        let pick = resample(&cands, 0.0, 1, SamplingMode::Proportional, &mut g).unwrap();
        let i = cands.iter().position(|c| c.doc_id == pick[0].doc_id).unwrap();
        counts[i] += 1;
    }
    let freq = counts.map(|c| c as f64 / draws as f64);
    let dev = freq.iter().zip(&target).map(|(f, t)| (f - t).abs()).fold(0.0, f64::max);
    outcome(
        dev <= 0.01,
        format!(
            "frequencies {:.4}/{:.4}/{:.4}, max deviation {dev:.4} (<= 0.01)",
            freq[0], freq[1], freq[2]
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Error detection on the reference corpus

fn criterion_5() -> Outcome {
    let cfg = reference();
    let corpus = generate_synthetic(&cfg.data).unwrap();
    let (m1, _) = stage1_pretrain(&cfg, &corpus).unwrap();
    let (_, report) = stage2_train_adapter(&cfg, &corpus, m1).unwrap();
    let f1 = report.heldout.error_detection.f1;
    let base = report.heldout_baseline.error_detection.f1;
    outcome(
        f1 >= 0.80 && f1 > base,
        format!(
            "held-out error-detection F1 {f1:.4} (>= 0.80), majority baseline {base:.4}, {} held-out pairs",
            report.heldout_pairs
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Ablation direction

fn criterion_6() -> Outcome {
    let cfg = reference();
    let corpus = generate_synthetic(&cfg.data).unwrap();
    let r = run_ablation(&cfg, &corpus, &SEEDS).unwrap();
    let full = r.mean("full");
    let drop = |v: &str| full - r.mean(v);
    let (res, ln, ci) = (drop("no_residual"), drop("no_linear_norm"), drop("no_context_init"));
    let pass = res > 0.0 && ln > 0.0 && ln < res && ci > 0.0 && ci < res;
    outcome(
        pass,
        format!(
            "mean F1 full {full:.4}; drop w/o residual {res:+.4}, w/o linear-norm {ln:+.4}, w/o context-init {ci:+.4} \
             (need residual > 0 and 0 < each other < residual)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. End-to-end trend

fn criterion_7() -> Outcome {
    let base_cfg = reference();
    let corpus = generate_synthetic(&base_cfg.data).unwrap();
    let (mut s1, mut plain, mut full) = (0.0, 0.0, 0.0);
    for &seed in &SEEDS {
        let mut cfg = base_cfg.clone();
        cfg.seed = seed;
        let (m1, _) = stage1_pretrain(&cfg, &corpus).unwrap();
        let r1 = run_eval(&cfg, &corpus, &m1, EvalMode::Base, Split::Dev).unwrap();
        let (m2, _) = stage2_train_adapter(&cfg, &corpus, m1).unwrap();
        let (m3, _) = stage3_joint_finetune(&cfg, &corpus, m2).unwrap();
        let rb = run_eval(&cfg, &corpus, &m3, EvalMode::Base, Split::Dev).unwrap();
        let rr = run_eval(&cfg, &corpus, &m3, EvalMode::Rerank, Split::Dev).unwrap();
        let n = SEEDS.len() as f64;
        s1 += r1.recall_at[&1] / n;
        plain += rb.recall_at[&1] / n;
        full += rr.recall_at[&1] / n;
        for r in [&r1, &rb, &rr] {
            keep(r);
        }
    }
    outcome(
        full > s1 && full >= plain,
        format!("mean dev r@1: stage-1 {s1:.4}, joint w/o reranking {plain:.4}, full {full:.4} (need full > stage-1, full >= w/o reranking)"),
    )
}

// ---------------------------------------------------------------------------
// 8. Gradient-profile sanity

fn criterion_8() -> Outcome {
    let mut g = rng(8);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let d = g.random_range(1..=32usize);
        let q: Vec<f32> = (0..d).map(|_| g.random_range(-1.0f32..1.0)).collect();
        let c: Vec<f32> = (0..d).map(|_| g.random_range(-1.0f32..1.0)).collect();
        let s: f64 = q.iter().zip(&c).map(|(&a, &b)| a as f64 * b as f64).sum();
        let qn = q.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        let got = pair_gradient_norm(SimilarityKind::Dot, &q, &c).unwrap();
        worst = worst.max((got - sigmoid(s) * qn).abs());
    }

    let cfg = reference();
    let corpus = generate_synthetic(&cfg.data).unwrap();
    let (m1, _) = stage1_pretrain(&cfg, &corpus).unwrap();
    let (m2, _) = stage2_train_adapter(&cfg, &corpus, m1).unwrap();
    let (model, _) = stage3_joint_finetune(&cfg, &corpus, m2).unwrap();
    let before = model.to_checkpoint(cfg.hash(), 3).to_bytes();
    let mut means = Vec::new();
    for sampler in [SamplerKind::Topk, SamplerKind::Rrra, SamplerKind::Random] {
        let p = run_grad_profile(&cfg, &corpus, &model, sampler).unwrap();
        means.push((sampler, p.bucket("0-3").and_then(|b| b.mean)));
    }
    let untouched = model.to_checkpoint(cfg.hash(), 3).to_bytes() == before;
    let show = |m: Option<f64>| m.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
    outcome(
        worst <= 1e-5 && untouched,
        format!(
            "parameters bit-identical {untouched}; max |grad - sigma(s)|q|| {worst:.2e} (<= 1e-5); \
             bucket 0-3 mean: topk {}, rrra {}, random {} (reference expectation topk 0.65-0.85, rrra 0.55-0.65, not asserted)",
            show(means[0].1),
            show(means[1].1),
            show(means[2].1)
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Determinism and persistence

fn full_run(cfg: &Config) -> (Vec<Vec<u8>>, Vec<EvalReport>) {
    let corpus = generate_synthetic(&cfg.data).unwrap();
    let (m1, _) = stage1_pretrain(cfg, &corpus).unwrap();
    let (m2, _) = stage2_train_adapter(cfg, &corpus, m1.clone()).unwrap();
    let (m3, _) = stage3_joint_finetune(cfg, &corpus, m2.clone()).unwrap();
    let ckpts = [(&m1, 1), (&m2, 2), (&m3, 3)]
        .iter()
        .map(|(m, s)| m.to_checkpoint(cfg.hash(), *s).to_bytes())
        .collect();
    let reports: Vec<EvalReport> = [EvalMode::Base, EvalMode::Rerank]
        .iter()
        .map(|&mode| run_eval(cfg, &corpus, &m3, mode, Split::Dev).unwrap())
        .collect();
    (ckpts, reports)
}

fn criterion_9() -> Outcome {
    let cfg = reference();
    let (c1, r1) = full_run(&cfg);
    let (c2, r2) = full_run(&cfg);
    let reproducible = c1 == c2 && r1 == r2;
    r1.iter().for_each(keep);

    let bytes = &c1[2];
    let ckpt = Checkpoint::from_bytes(bytes).unwrap();
    let model = Model::from_checkpoint(&cfg, &ckpt).unwrap();
    let lossless = ckpt.to_bytes() == *bytes && model.to_checkpoint(cfg.hash(), 3).to_bytes() == *bytes;

    let mut corruptions: Vec<Vec<u8>> = Vec::new();
    let mut b = bytes.clone();
    b[0] ^= 0xFF;
    corruptions.push(b);
    let mut b = bytes.clone();
    b[8] = b[8].wrapping_add(1);
    corruptions.push(b);
    let mut b = bytes.clone();
    b.push(0);
    corruptions.push(b);
    // Oversized name length in the first record.
    let mut b = bytes.clone();
    b[28..32].copy_from_slice(&u32::MAX.to_le_bytes());
    corruptions.push(b);
    for cut in (0..bytes.len()).step_by(997) {
        corruptions.push(bytes[..cut].to_vec());
    }
    let total = corruptions.len();
    let rejected = corruptions
        .iter()
        .filter(|b| matches!(catch_unwind(|| Checkpoint::from_bytes(b).is_err()), Ok(true)))
        .count();
    outcome(
        reproducible && lossless && rejected == total,
        format!(
            "two full runs bit-identical {reproducible}; round trip lossless {lossless}; corrupted inputs rejected {rejected}/{total}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 10. Metric oracles

fn criterion_10() -> Outcome {
    let ranked: Vec<(String, Vec<String>)> = [
        ("q1", vec!["d1", "d2", "d3", "d4", "d5"]),
        ("q2", vec!["d9", "d8", "d7"]),
        ("q3", vec!["d1", "d2"]),
        ("q4", vec!["d1"]),
    ]
    .into_iter()
    .map(|(q, d)| (q.to_string(), d.into_iter().map(String::from).collect()))
    .collect();
    let qrels = qrels_from_pairs([("q1", "d3"), ("q2", "d9"), ("q2", "d7"), ("q3", "d5")]);
    let r = recall_at_k(&ranked, &qrels, &[1, 2, 3, 5]).unwrap();
    let want = [(1, 1.0 / 3.0), (2, 1.0 / 3.0), (3, 2.0 / 3.0), (5, 2.0 / 3.0)];
    let recall_ok = want.iter().all(|&(k, v)| r.recall_at[&k] == v)
        && r.evaluated_queries == 3
        && r.excluded_queries == 1
        && r.first_hit["q1"] == Some(2)
        && r.first_hit["q3"].is_none();

    use OutcomeLabel::*;
    let gold = [TP, TP, FN, FN, FP, TN, TN, TN];
    let pred = [TP, FN, FN, TP, FP, TN, FP, TN];
    let f = adapter_f1(&pred, &gold).unwrap();
    let f1s = [0.5, 0.5, 2.0 / 3.0, 4.0 / 5.0];
    let f1_ok = f.per_class.iter().zip(f1s).all(|(s, want)| s.f1 == want)
        && f.macro_f1 == (0.5 + 0.5 + 2.0 / 3.0 + 4.0 / 5.0) / 4.0
        && f.error_detection.f1 == 4.0 / 7.0
        && f.error_detection.precision == 0.5
        && f.error_detection.recall == 2.0 / 3.0
        && f.accuracy == 5.0 / 8.0
        && f.confusion == [[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 0], [0, 0, 1, 2]];

    let reports = REPORTS.lock().unwrap();
    let monotone = reports.iter().all(EvalReport::is_monotone) && r.is_monotone();
    outcome(
        recall_ok && f1_ok && monotone,
        format!(
            "recall fixture {recall_ok}; F1 fixture {f1_ok}; recall monotone in k on {} reports {monotone}",
            reports.len() + 1
        ),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    type Criterion = (u32, &'static str, u64, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        (1, "gradient correctness", 30, criterion_1),
        (2, "projection oracle", 5, criterion_2),
        (3, "score-formula oracles", 30, criterion_3),
        (4, "resampling distribution", 5, criterion_4),
        (5, "false-negative detection", 120, criterion_5),
        (6, "ablation direction", 600, criterion_6),
        (7, "end-to-end trend", 1200, criterion_7),
        (8, "gradient-profile sanity", 300, criterion_8),
        (9, "determinism and persistence", 300, criterion_9),
        (10, "metric oracles", 30, criterion_10),
    ];
    let filter: HashSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, budget, run) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run));
        let took = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        let in_time = took <= Duration::from_secs(budget);
        let pass = pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {n:>2} ({name}): {detail}; {:.1}s of {budget}s budget",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
