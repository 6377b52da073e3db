//! Helpers shared by the integration suites: a finite-difference harness over
//! tape inputs, random generators and small independent oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rrra_core::numkernel::gradcheck::{max_relative_error, numeric_gradient};
use rrra_core::numkernel::{Tape, Var};
use rrra_core::Result;

pub const FD_EPS: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Values bounded away from zero, for ops with a kink there.
pub fn away_from_zero(rng: &mut impl Rng, n: usize, scale: f64, margin: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(margin..scale);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

pub struct Input {
    pub dims: Vec<usize>,
    pub value: Vec<f64>,
}

impl Input {
    pub fn vector(value: Vec<f64>) -> Self {
        Input {
            dims: vec![value.len()],
            value,
        }
    }

    pub fn matrix(rows: usize, cols: usize, value: Vec<f64>) -> Self {
        assert_eq!(rows * cols, value.len());
        Input {
            dims: vec![rows, cols],
            value,
        }
    }
}

fn evaluate<F>(inputs: &[Input], values: &[Vec<f64>], f: &F) -> Result<(f64, Vec<Vec<f64>>)>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(values)
        .map(|(i, v)| tape.input(&i.dims, v.clone()))
        .collect::<Result<_>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let g = vars
        .iter()
        .zip(values)
        .map(|(&v, val)| {
            grads
                .input(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; val.len()])
        })
        .collect();
    Ok((tape.scalar(out), g))
}

/// Max relative error between the tape's input gradients and central
/// differences of `reference` (which defaults to the taped forward value).
pub fn fd_check_against<F, G>(inputs: &[Input], f: F, reference: G) -> Result<f64>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
    G: Fn(&[Vec<f64>]) -> f64,
{
    let values: Vec<Vec<f64>> = inputs.iter().map(|i| i.value.clone()).collect();
    let (_, analytic) = evaluate(inputs, &values, &f)?;
    let flat: Vec<f64> = values.iter().flatten().copied().collect();
    let split = |x: &[f64]| {
        let mut out = Vec::with_capacity(values.len());
        let mut at = 0;
        for v in &values {
            out.push(x[at..at + v.len()].to_vec());
            at += v.len();
        }
        out
    };
    let numeric = numeric_gradient(&flat, FD_EPS, |x| reference(&split(x)));
    let analytic: Vec<f64> = analytic.into_iter().flatten().collect();
    Ok(max_relative_error(&analytic, &numeric))
}

pub fn fd_check<F>(inputs: &[Input], f: F) -> Result<f64>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let forward = |vals: &[Vec<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .zip(vals)
            .map(|(i, v)| tape.input(&i.dims, v.clone()).expect("valid input"))
            .collect();
        let out = f(&mut tape, &vars).expect("forward succeeds");
        tape.scalar(out)
    };
    fd_check_against(inputs, &f, forward)
}

/// `s_hn (1 - s_fn)^γ` written without `powf` for the exponents under test.
pub fn resample_oracle(s_hn: f64, s_fn: f64, gamma: f64) -> f64 {
    s_hn * power(1.0 - s_fn, gamma)
}

/// `s_base · s_adapter^λ`, same construction.
pub fn rerank_oracle(s_base: f64, s_adapter: f64, lambda: f64) -> f64 {
    s_base * power(s_adapter, lambda)
}

fn power(x: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if e == 0.5 {
        x.sqrt()
    } else if e == 1.0 {
        x
    } else if e == 2.0 {
        x * x
    } else {
        (e * x.ln()).exp()
    }
}

/// Distance in units in the last place between two finite doubles.
pub fn ulps(a: f64, b: f64) -> u64 {
    if a == b {
        return 0;
    }
    let key = |x: f64| {
        let bits = x.to_bits() as i64;
        if bits < 0 {
            i64::MIN - bits
        } else {
            bits
        }
    };
    key(a).abs_diff(key(b))
}

/// Grid minimum of `||a - (αq + (1-α)c)||²` over α in steps of `step`.
pub fn alpha_grid_min(a: &[f64], q: &[f64], c: &[f64], step: f64) -> (f64, f64) {
    let n = (1.0 / step).round() as usize;
    (0..=n)
        .map(|i| {
            let alpha = i as f64 * step;
            let loss: f64 = a
                .iter()
                .zip(q.iter().zip(c))
                .map(|(&ai, (&qi, &ci))| {
                    let r = ai - (alpha * qi + (1.0 - alpha) * ci);
                    r * r
                })
                .sum();
            (alpha, loss)
        })
        .fold(
            (0.0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}
