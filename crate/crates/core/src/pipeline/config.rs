use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapter::AdapterConfig;
use crate::encoder::{fnv1a64, EncoderConfig};
use crate::error::{Error, Result};
use crate::io_util::read_to_string;
use crate::numkernel::AdamWConfig;
use crate::sampling::{SamplerKind, SamplingMode, ScoreParams};
use crate::supervision::JointLossConfig;

use super::synthetic::SyntheticSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisionConfig {
    pub tau: f64,
    pub gamma_imb: f64,
    /// Weight on the joint objective's adapter term.
    pub lambda: f64,
    /// Weight on the label-directed pull of the adapted embedding.
    pub dir_weight: f64,
    /// Negatives per positive in adapter training pairs.
    pub neg_ratio: usize,
}

impl Default for SupervisionConfig {
    fn default() -> Self {
        SupervisionConfig {
            tau: 0.5,
            gamma_imb: 0.3,
            lambda: JointLossConfig::default().lambda,
            dir_weight: 1.0,
            neg_ratio: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub gamma_rs: f64,
    pub lambda_rr: f64,
    /// Hard negatives per query in joint training.
    pub m: usize,
    /// Mining pool depth.
    pub pool_k: usize,
    pub mode: SamplingMode,
    pub sampler: SamplerKind,
    /// Candidates reranked at inference.
    pub rerank_depth: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            gamma_rs: 1.0,
            lambda_rr: 1.0,
            m: 4,
            pool_k: 64,
            mode: SamplingMode::Proportional,
            sampler: SamplerKind::Rrra,
            rerank_depth: 100,
        }
    }
}

impl SamplingConfig {
    pub fn score_params(&self) -> ScoreParams {
        ScoreParams {
            gamma_rs: self.gamma_rs,
            lambda_rr: self.lambda_rr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
}

impl StageConfig {
    fn with(epochs: usize, batch_size: usize, grad_accum: usize, lr: f64) -> Self {
        StageConfig {
            epochs,
            batch_size,
            grad_accum,
            lr,
            warmup_steps: 0,
            weight_decay: 0.0,
        }
    }

    pub fn effective_batch(&self) -> usize {
        self.batch_size * self.grad_accum
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            warmup_steps: self.warmup_steps,
            ..AdamWConfig::default()
        }
    }
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig::with(10, 128, 1, 1e-2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    /// Split evaluated by `eval`, `rerank` and the sweeps.
    pub split: String,
    pub profile_queries: usize,
    pub profile_candidates: usize,
    pub profile_trials: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: crate::index_eval::DEFAULT_KS.to_vec(),
            split: "dev".into(),
            profile_queries: 100,
            profile_candidates: 1000,
            profile_trials: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub adapter: AdapterConfig,
    pub supervision: SupervisionConfig,
    pub sampling: SamplingConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub stage3: StageConfig,
    pub eval: EvalConfig,
    pub data: SyntheticSpec,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 42,
            encoder: EncoderConfig::default(),
            adapter: AdapterConfig::default(),
            supervision: SupervisionConfig::default(),
            sampling: SamplingConfig::default(),
            stage1: StageConfig::with(10, 128, 1, 1e-2),
            stage2: StageConfig::with(5, 128, 1, 1e-2),
            stage3: StageConfig::with(5, 64, 2, 5e-3),
            eval: EvalConfig::default(),
            data: SyntheticSpec::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} must be non-negative and finite, got {v}"
        )))
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| e.context(format!("loading {}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [
            ("stage1", &self.stage1),
            ("stage2", &self.stage2),
            ("stage3", &self.stage3),
        ] {
            if s.batch_size == 0 || s.grad_accum == 0 {
                return Err(Error::Config(format!(
                    "{name}: batch_size and grad_accum must be positive"
                )));
            }
            positive(&format!("{name}.lr"), s.lr)?;
            non_negative(&format!("{name}.weight_decay"), s.weight_decay)?;
        }
        let sup = &self.supervision;
        if !(sup.tau > 0.0 && sup.tau < 1.0) {
            return Err(Error::Config(format!(
                "supervision.tau must lie in (0, 1), got {}",
                sup.tau
            )));
        }
        non_negative("supervision.gamma_imb", sup.gamma_imb)?;
        non_negative("supervision.lambda", sup.lambda)?;
        non_negative("supervision.dir_weight", sup.dir_weight)?;
        if sup.neg_ratio == 0 {
            return Err(Error::Config("supervision.neg_ratio must be positive".into()));
        }
        self.sampling
            .score_params()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.sampling.pool_k == 0 || self.sampling.rerank_depth == 0 {
            return Err(Error::Config(
                "sampling.pool_k and rerank_depth must be positive".into(),
            ));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::Config("eval.ks must be non-empty and positive".into()));
        }
        self.data.validate()
    }

    /// Stable hash of the full configuration.
    pub fn hash(&self) -> u64 {
        fnv1a64(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Applies `section.key=value` (or `key=value` at top level). The value is
    /// parsed as a TOML literal, falling back to a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let path = path.trim();
        let raw = raw.trim();
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));

        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut slot = &mut root;
        let keys: Vec<&str> = path.split('.').collect();
        for (i, key) in keys.iter().enumerate() {
            let table = slot
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("{path}: {key} is not a section")))?;
            if !table.contains_key(*key) {
                return Err(Error::Config(format!("unknown setting {path}")));
            }
            slot = table.get_mut(*key).expect("checked above");
            if i + 1 == keys.len() {
                *slot = coerce(slot, value.clone());
            }
        }
        let next: Config = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{path}: {e}")))?;
        next.validate()?;
        *self = next;
        Ok(())
    }
}

/// Integers given where floats are expected (`lr=1`) become floats.
fn coerce(old: &toml::Value, new: toml::Value) -> toml::Value {
    match (old, &new) {
        (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(*i as f64),
        _ => new,
    }
}
