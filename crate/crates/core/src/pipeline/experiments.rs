use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::Config;
use super::corpus::{Corpus, Split};
use super::eval::{run_eval, EvalMode};
use super::model::Model;
use super::train::{stage1_pretrain, stage2_train_adapter, stage3_joint_finetune};
use crate::error::{Error, Result};
use crate::index_eval::EvalReport;

pub const ABLATIONS: [&str; 4] = ["full", "no_residual", "no_linear_norm", "no_context_init"];

pub fn ablation_config(base: &Config, variant: &str) -> Result<Config> {
    let mut cfg = base.clone();
    match variant {
        "full" => {}
        "no_residual" => cfg.adapter.use_residual = false,
        "no_linear_norm" => cfg.adapter.use_linear_norm = false,
        "no_context_init" => cfg.adapter.use_context_init = false,
        other => return Err(Error::Config(format!("unknown ablation {other:?}"))),
    }
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub seeds: Vec<u64>,
    /// Held-out error-detection F1 per variant, one entry per seed.
    pub f1: BTreeMap<String, Vec<f64>>,
    pub baseline_f1: Vec<f64>,
}

impl AblationResult {
    pub fn mean(&self, variant: &str) -> f64 {
        let v = &self.f1[variant];
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,seed,error_detection_f1\n");
        for (variant, vals) in &self.f1 {
            for (s, v) in self.seeds.iter().zip(vals) {
                let _ = writeln!(out, "{variant},{s},{v:.6}");
            }
        }
        out
    }
}

/// Stage 1 once per seed, then stage 2 under each adapter variant.
pub fn run_ablation(base: &Config, corpus: &Corpus, seeds: &[u64]) -> Result<AblationResult> {
    let mut f1: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut baseline = Vec::new();
    for &seed in seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        let (stage1, _) = stage1_pretrain(&cfg, corpus)?;
        for variant in ABLATIONS {
            let vcfg = ablation_config(&cfg, variant)?;
            let (_, report) = stage2_train_adapter(&vcfg, corpus, stage1.clone())?;
            if variant == "full" {
                baseline.push(report.heldout_baseline.error_detection.f1);
            }
            f1.entry(variant.to_string())
                .or_default()
                .push(report.heldout.error_detection.f1);
        }
    }
    Ok(AblationResult {
        seeds: seeds.to_vec(),
        f1,
        baseline_f1: baseline,
    })
}

/// Parameters that only change inference, so no retraining is needed.
pub fn inference_only(param: &str) -> bool {
    matches!(param, "lambda_rr" | "sampling.lambda_rr" | "sampling.rerank_depth")
}

/// Short names accepted by `sweep --param`.
pub fn qualify(param: &str) -> String {
    match param {
        "gamma_rs" | "lambda_rr" | "m" | "pool_k" | "rerank_depth" => format!("sampling.{param}"),
        "lambda" | "tau" | "gamma_imb" | "dir_weight" => format!("supervision.{param}"),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: String,
    pub report: EvalReport,
}

/// For each value: re-run joint fine-tuning from `stage2` (unless the
/// parameter is inference-only, then use `stage3`) and evaluate with reranking.
pub fn run_sweep(
    base: &Config,
    corpus: &Corpus,
    param: &str,
    values: &[String],
    stage2: &Model,
    stage3: Option<&Model>,
    split: Split,
) -> Result<Vec<SweepPoint>> {
    let key = qualify(param);
    let mut out = Vec::new();
    for value in values {
        let mut cfg = base.clone();
        cfg.set(&format!("{key}={value}"))?;
        let report = if inference_only(&key) {
            let model = stage3.unwrap_or(stage2);
            run_eval(&cfg, corpus, model, EvalMode::Rerank, split)?
        } else {
            let (model, _) = stage3_joint_finetune(&cfg, corpus, stage2.clone())?;
            run_eval(&cfg, corpus, &model, EvalMode::Rerank, split)?
        };
        out.push(SweepPoint {
            value: value.clone(),
            report,
        });
    }
    Ok(out)
}

pub fn sweep_summary_csv(param: &str, points: &[SweepPoint]) -> String {
    let ks: Vec<usize> = points
        .first()
        .map(|p| p.report.recall_at.keys().copied().collect())
        .unwrap_or_default();
    let mut out = param.to_string();
    for k in &ks {
        let _ = write!(out, ",r@{k}");
    }
    out.push('\n');
    for p in points {
        out.push_str(&p.value);
        for k in &ks {
            let _ = write!(out, ",{:.6}", p.report.recall_at[k]);
        }
        out.push('\n');
    }
    out
}
