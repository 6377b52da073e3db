//! Central finite differences, used as the oracle for every hand-derived
//! backward rule.

/// Floor on the denominator of [`relative_error`], so that components whose
/// true gradient is ~0 are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x` with step `eps`, evaluated in f64.
pub fn numeric_gradient(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Central differences for f32-stored inputs. The perturbed points are
/// rounded to f32 and the realised step is used as the divisor, so the only
/// error left is truncation.
pub fn numeric_gradient_f32(x: &[f32], eps: f64, mut f: impl FnMut(&[f32]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let hi = (x[i] as f64 + eps) as f32;
            let lo = (x[i] as f64 - eps) as f32;
            probe[i] = hi;
            let up = f(&probe);
            probe[i] = lo;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (hi as f64 - lo as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let g = numeric_gradient(&[1.0, -2.0], 1e-4, |x| x[0] * x[0] + 3.0 * x[1]);
        assert!((g[0] - 2.0).abs() < 1e-9);
        assert!((g[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn f32_steps_are_exact() {
        let g = numeric_gradient_f32(&[0.037], 1e-4, |x| (x[0] as f64).powi(2));
        assert!((g[0] - 2.0 * 0.037f32 as f64).abs() < 1e-9);
    }
}
