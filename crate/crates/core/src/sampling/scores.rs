use serde::{Deserialize, Serialize};

use crate::adapter::{Adapter, AdapterOutput};
use crate::encoder::unit_interval_similarity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    pub gamma_rs: f64,
    pub lambda_rr: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        ScoreParams {
            gamma_rs: 1.0,
            lambda_rr: 1.0,
        }
    }
}

impl ScoreParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma_rs", self.gamma_rs), ("lambda_rr", self.lambda_rr)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::OutOfRange(format!("{name} = {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairScores {
    pub s_hn: f64,
    pub s_fn: f64,
    pub output: AdapterOutput,
}

/// `s_hn = sim01(q, a)`, `s_fn = sim01(a, c)` with `a` the adapted embedding.
pub fn score_pair(q: &[f32], c: &[f32], adapter: &Adapter) -> Result<PairScores> {
    let output = adapter.adapt(q, c)?;
    let q64: Vec<f64> = q.iter().map(|&v| v as f64).collect();
    let c64: Vec<f64> = c.iter().map(|&v| v as f64).collect();
    Ok(PairScores {
        s_hn: unit_interval_similarity(&q64, &output.a)?,
        s_fn: unit_interval_similarity(&output.a, &c64)?,
        output,
    })
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("{name} = {v}, expected [0, 1]")))
    }
}

fn check_exponent(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("{name} = {v}")))
    }
}

/// `s_hn · (1 - s_fn)^γ`, with `0^0 = 1`.
pub fn resample_score(s_hn: f64, s_fn: f64, gamma_rs: f64) -> Result<f64> {
    check_unit("s_hn", s_hn)?;
    check_unit("s_fn", s_fn)?;
    check_exponent("gamma_rs", gamma_rs)?;
    Ok(s_hn * (1.0 - s_fn).powf(gamma_rs))
}

/// `s_base · s_adapter^λ`, with `0^0 = 1`.
pub fn rerank_score(s_base: f64, s_adapter: f64, lambda_rr: f64) -> Result<f64> {
    check_unit("s_base", s_base)?;
    check_unit("s_adapter", s_adapter)?;
    check_exponent("lambda_rr", lambda_rr)?;
    Ok(s_base * s_adapter.powf(lambda_rr))
}
