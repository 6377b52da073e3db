use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::Config;
use crate::adapter::Adapter;
use crate::derive_seed;
use crate::encoder::DualEncoder;
use crate::error::{Error, Result};
use crate::numkernel::{ParamId, Tensor};

/// Encoder plus, from stage 2 on, the adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: DualEncoder,
    pub adapter: Option<Adapter>,
}

pub fn new_adapter(cfg: &Config) -> Result<Adapter> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "adapter-init", 0));
    Adapter::new(&cfg.adapter, cfg.encoder.dim, &mut rng)
}

impl Model {
    pub fn init(cfg: &Config) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "encoder-init", 0));
        Ok(Model {
            encoder: DualEncoder::new(&cfg.encoder, &mut rng)?,
            adapter: None,
        })
    }

    pub fn named_params(&self) -> Vec<(ParamId, &'static str, &Tensor)> {
        let mut p = self.encoder.params();
        if let Some(a) = &self.adapter {
            p.extend(a.params());
        }
        p
    }

    pub fn to_checkpoint(&self, config_hash: u64, stage: u32) -> Checkpoint {
        Checkpoint {
            config_hash,
            stage,
            records: self
                .named_params()
                .into_iter()
                .map(|(_, n, t)| (n.to_string(), t.clone()))
                .collect(),
        }
    }

    /// Rebuilds a model shaped by `cfg` and fills it from `ckpt`. Every record
    /// is checked against the expected shapes before anything is assigned.
    pub fn from_checkpoint(cfg: &Config, ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Model::init(cfg)?;
        if ckpt.records.iter().any(|(n, _)| n.starts_with("adapter.")) {
            model.adapter = Some(new_adapter(cfg)?);
        }
        let expected: Vec<(&'static str, Vec<usize>)> = model
            .named_params()
            .into_iter()
            .map(|(_, n, t)| (n, t.dims().to_vec()))
            .collect();
        for (name, dims) in &expected {
            let t = ckpt
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing record {name}")))?;
            if t.dims() != dims.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected dims {dims:?}, found {:?}",
                    t.dims()
                )));
            }
        }
        for (name, _) in &ckpt.records {
            if !expected.iter().any(|(n, _)| n == name) {
                return Err(Error::Checkpoint(format!("unexpected record {name}")));
            }
        }
        let lookup = |name: &str| ckpt.get(name).expect("validated").clone();
        let enc = &mut model.encoder;
        enc.embedding = lookup("encoder.embedding");
        enc.projection = lookup("encoder.projection");
        if let Some(a) = &mut model.adapter {
            a.trunk_w = lookup("adapter.trunk.weight");
            a.trunk_b = lookup("adapter.trunk.bias");
            a.residual_w = lookup("adapter.residual.weight");
            a.residual_b = lookup("adapter.residual.bias");
            a.class_w = lookup("adapter.class.weight");
            a.class_b = lookup("adapter.class.bias");
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let cfg = Config::default();
        let mut m = Model::init(&cfg).unwrap();
        m.adapter = Some(new_adapter(&cfg).unwrap());
        let ck = m.to_checkpoint(cfg.hash(), 2);
        assert_eq!(Model::from_checkpoint(&cfg, &ck).unwrap(), m);
    }

    #[test]
    fn dim_mismatch_rejected() {
        let cfg = Config::default();
        let m = Model::init(&cfg).unwrap();
        let ck = m.to_checkpoint(cfg.hash(), 1);
        let mut other = cfg.clone();
        other.encoder.dim = 16;
        assert!(Model::from_checkpoint(&other, &ck).is_err());
    }
}
