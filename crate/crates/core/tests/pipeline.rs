use rrra_core::pipeline::{
    continue_contrastive, contrastive_train_loss, generate_synthetic, run_eval, stage1_pretrain, stage2_train_adapter,
    stage3_joint_finetune, Config, Corpus, EvalMode, Model, Split,
};

const REFERENCE: &str = include_str!("../../../configs/reference.toml");

/// Five clusters of four queries: small enough to train in well under a second.
fn tiny(seed: u64) -> (Config, Corpus) {
    let mut cfg = Config {
        seed,
        ..Default::default()
    };
    cfg.data.n_clusters = 5;
    cfg.data.seed = seed;
    for s in [&mut cfg.stage1, &mut cfg.stage2, &mut cfg.stage3] {
        s.epochs = 2;
        s.batch_size = 8;
    }
    cfg.sampling.pool_k = 20;
    cfg.sampling.m = 2;
    let corpus = generate_synthetic(&cfg.data).unwrap();
    (cfg, corpus)
}

fn bytes(cfg: &Config, m: &Model, stage: u32) -> Vec<u8> {
    m.to_checkpoint(cfg.hash(), stage).to_bytes()
}

fn encoder_bytes(m: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    for (_, _, t) in m.encoder.params() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

#[test]
fn reference_config_parses_and_differs_only_in_stage3() {
    let cfg = Config::from_toml(REFERENCE).unwrap();
    let def = Config::default();
    assert_eq!(cfg.stage3.epochs, 20);
    assert_eq!(cfg.stage3.lr, 0.02);
    let mut patched = cfg.clone();
    patched.stage3 = def.stage3.clone();
    assert_eq!(patched, def);
}

#[test]
fn full_pipeline_is_deterministic() {
    let run = || {
        let (cfg, corpus) = tiny(7);
        let (m1, l1) = stage1_pretrain(&cfg, &corpus).unwrap();
        let (m2, r2) = stage2_train_adapter(&cfg, &corpus, m1.clone()).unwrap();
        let (m3, l3) = stage3_joint_finetune(&cfg, &corpus, m2.clone()).unwrap();
        let eval = run_eval(&cfg, &corpus, &m3, EvalMode::Rerank, Split::Dev).unwrap();
        (
            [bytes(&cfg, &m1, 1), bytes(&cfg, &m2, 2), bytes(&cfg, &m3, 3)],
            l1,
            r2,
            l3,
            eval,
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn adapter_training_leaves_encoder_untouched() {
    let (cfg, corpus) = tiny(3);
    let (m1, _) = stage1_pretrain(&cfg, &corpus).unwrap();
    let before = encoder_bytes(&m1);
    let (m2, report) = stage2_train_adapter(&cfg, &corpus, m1).unwrap();
    assert_eq!(encoder_bytes(&m2), before);
    assert!(m2.adapter.is_some());
    assert!(report.heldout_pairs > 0);
}

#[test]
fn joint_stage_without_adapter_terms_is_plain_contrastive() {
    let (mut cfg, corpus) = tiny(5);
    cfg.supervision.lambda = 0.0;
    cfg.sampling.gamma_rs = 0.0;
    cfg.sampling.m = 0;
    let (m1, _) = stage1_pretrain(&cfg, &corpus).unwrap();
    let (m2, _) = stage2_train_adapter(&cfg, &corpus, m1).unwrap();
    let (joint, jlog) = stage3_joint_finetune(&cfg, &corpus, m2.clone()).unwrap();
    let mut plain = m2;
    let plog = continue_contrastive(&cfg, &cfg.stage3, &corpus, &mut plain).unwrap();
    assert_eq!(bytes(&cfg, &joint, 3), bytes(&cfg, &plain, 3));
    assert_eq!(jlog.step_losses, plog.step_losses);
}

#[test]
fn one_epoch_lowers_training_loss() {
    for seed in 1..=5 {
        let (mut cfg, corpus) = tiny(seed);
        cfg.stage1.epochs = 1;
        let start = Model::init(&cfg).unwrap();
        let before = contrastive_train_loss(&cfg, &corpus, &start).unwrap();
        let (m1, _) = stage1_pretrain(&cfg, &corpus).unwrap();
        let after = contrastive_train_loss(&cfg, &corpus, &m1).unwrap();
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn evaluation_is_repeatable_and_rerank_at_zero_weight_is_base() {
    let (mut cfg, corpus) = tiny(11);
    let (m1, _) = stage1_pretrain(&cfg, &corpus).unwrap();
    let (m2, _) = stage2_train_adapter(&cfg, &corpus, m1).unwrap();
    let a = run_eval(&cfg, &corpus, &m2, EvalMode::Rerank, Split::Dev).unwrap();
    let b = run_eval(&cfg, &corpus, &m2, EvalMode::Rerank, Split::Dev).unwrap();
    assert_eq!(a, b);

    cfg.sampling.lambda_rr = 0.0;
    let base = run_eval(&cfg, &corpus, &m2, EvalMode::Base, Split::Dev).unwrap();
    let zero = run_eval(&cfg, &corpus, &m2, EvalMode::Rerank, Split::Dev).unwrap();
    assert_eq!(base.recall_at, zero.recall_at);
    assert_eq!(base.first_hit, zero.first_hit);
}

#[test]
fn step_count_depends_only_on_effective_batch() {
    let (cfg, corpus) = tiny(2);
    let steps = |batch: usize, accum: usize| {
        let mut c = cfg.clone();
        c.stage1.epochs = 1;
        c.stage1.batch_size = batch;
        c.stage1.grad_accum = accum;
        assert_eq!(c.stage1.effective_batch(), batch * accum);
        stage1_pretrain(&c, &corpus).unwrap().1.step_losses.len()
    };
    let n = steps(8, 1);
    assert_eq!(steps(4, 2), n);
    assert_eq!(steps(2, 4), n);
    assert_ne!(steps(4, 1), n);
}

#[test]
fn stage_results_round_trip_through_checkpoints() {
    let (cfg, corpus) = tiny(9);
    let (m1, _) = stage1_pretrain(&cfg, &corpus).unwrap();
    let (m2, _) = stage2_train_adapter(&cfg, &corpus, m1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stage2.ckpt");
    m2.to_checkpoint(cfg.hash(), 2).save(&path).unwrap();
    let loaded = Model::from_checkpoint(&cfg, &rrra_core::Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(bytes(&cfg, &loaded, 2), bytes(&cfg, &m2, 2));
    let a = run_eval(&cfg, &corpus, &m2, EvalMode::Rerank, Split::Test).unwrap();
    let b = run_eval(&cfg, &corpus, &loaded, EvalMode::Rerank, Split::Test).unwrap();
    assert_eq!(a, b);
}
