use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tape::{ParamGrads, ParamId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            warmup_steps: 0,
        }
    }
}

impl AdamWConfig {
    /// Learning rate after `step` completed updates: linear ramp from 0, then flat.
    pub fn effective_lr(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.lr
        } else {
            self.lr * step as f64 / self.warmup_steps as f64
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// AdamW with bias correction and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub config: AdamWConfig,
    step: u64,
    moments: BTreeMap<ParamId, Moments>,
}

impl AdamWState {
    pub fn new(config: AdamWConfig) -> Self {
        AdamWState {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters missing from `grads` are treated as
    /// having zero gradient (their moments still decay).
    ///
    /// Update number `t` (1-based) uses `effective_lr(t)`, so the first update
    /// of a warmup schedule already moves the parameters.
    pub fn step(&mut self, params: &mut [(ParamId, &mut Tensor)], grads: &ParamGrads) -> Result<()> {
        for (id, p) in params.iter() {
            if let Some(g) = grads.get(*id) {
                if g.len() != p.len() {
                    return Err(Error::shape("adamw_step", p.dims(), &[g.len()]));
                }
            }
            if let Some(m) = self.moments.get(id) {
                if m.m.len() != p.len() {
                    return Err(Error::shape("adamw_step", p.dims(), &[m.m.len()]));
                }
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let lr = c.effective_lr(self.step);
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);

        for (id, p) in params.iter_mut() {
            let n = p.len();
            let mom = self.moments.entry(*id).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            let g = grads.get(*id);
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = g.map_or(0.0, |g| g[i]);
                mom.m[i] = c.beta1 * mom.m[i] + (1.0 - c.beta1) * gi;
                mom.v[i] = c.beta2 * mom.v[i] + (1.0 - c.beta2) * gi * gi;
                let m_hat = mom.m[i] / bc1;
                let v_hat = mom.v[i] / bc2;
                let mut x = *w as f64;
                x -= lr * c.weight_decay * x;
                x -= lr * m_hat / (v_hat.sqrt() + c.eps);
                *w = x as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_endpoints() {
        let cfg = AdamWConfig {
            lr: 0.1,
            warmup_steps: 10,
            ..Default::default()
        };
        assert_eq!(cfg.effective_lr(0), 0.0);
        assert_eq!(cfg.effective_lr(10), 0.1);
        assert_eq!(cfg.effective_lr(25), 0.1);
        assert!((cfg.effective_lr(5) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let mut p = Tensor::vector(vec![0.5, -1.25, 3.0]).unwrap();
        let before = p.clone();
        let mut opt = AdamWState::new(AdamWConfig {
            lr: 0.1,
            ..Default::default()
        });
        let mut grads = ParamGrads::default();
        grads.0.insert(ParamId(0), vec![0.0; 3]);
        for _ in 0..3 {
            opt.step(&mut [(ParamId(0), &mut p)], &grads).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn shape_mismatch_rejected_before_update() {
        let mut p = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let mut opt = AdamWState::new(AdamWConfig::default());
        let mut grads = ParamGrads::default();
        grads.0.insert(ParamId(0), vec![1.0; 3]);
        assert!(opt.step(&mut [(ParamId(0), &mut p)], &grads).is_err());
        assert_eq!(opt.step_count(), 0);
        assert_eq!(p.data(), &[1.0, 2.0]);
    }

    /// Independent scalar AdamW written out longhand.
    fn scalar_adamw(mut x: f64, grads: &[f64], lr: f64, wd: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (k, g) in grads.iter().enumerate() {
            let t = (k + 1) as f64;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powf(t));
            let vh = v / (1.0 - b2.powf(t));
            x = x - lr * wd * x - lr * mh / (vh.sqrt() + eps);
            x = x as f32 as f64;
        }
        x
    }

    #[test]
    fn matches_scalar_trace() {
        let fixed = [0.3, -0.7, 1.1];
        let (lr, wd) = (0.05, 0.01);
        let expected = scalar_adamw(2.0, &fixed, lr, wd);
        let mut p = Tensor::vector(vec![2.0]).unwrap();
        let mut opt = AdamWState::new(AdamWConfig {
            lr,
            weight_decay: wd,
            ..Default::default()
        });
        for g in fixed {
            let mut grads = ParamGrads::default();
            grads.0.insert(ParamId(3), vec![g]);
            opt.step(&mut [(ParamId(3), &mut p)], &grads).unwrap();
        }
        assert!(
            (p.data()[0] as f64 - expected).abs() < 1e-6,
            "{} vs {expected}",
            p.data()[0]
        );
    }
}
