//! Per-coordinate Laplace baseline for the ℓ∞ ball.
//!
//! Each client adds Laplace noise of scale `2r∞/ε0` to every coordinate
//! (sensitivity of one coordinate in `[−r∞, r∞]` is `2r∞`), so the mean of
//! `n` reports has per-coordinate variance `2(2r∞/ε0)²/n` and total error
//! `8·d·r∞²/(n·ε0²)`. Unbounded support: this baseline has no finite
//! communication budget.

use rand::Rng;

use dme_core::{DmeError, Result};

/// Closed-form error of the baseline: `8·d·r∞²/(n·ε0²)`.
pub fn baseline_mse(n: usize, d: usize, r_inf: f64, eps0: f64) -> Result<f64> {
    if eps0.is_nan() || eps0 <= 0.0 {
        return Err(DmeError::InvalidParameter(format!(
            "need a positive budget, got {eps0}"
        )));
    }
    if n == 0 || d == 0 {
        return Err(DmeError::InvalidParameter("need n >= 1 and d >= 1".into()));
    }
    Ok(8.0 * d as f64 * r_inf * r_inf / (n as f64 * eps0 * eps0))
}

/// One Laplace draw with the given scale (inverse-CDF sampling).
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.gen_range(-0.5..0.5);
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Privatize one vector with per-coordinate Laplace noise at LDP level `ε0`.
pub fn randomize<R: Rng + ?Sized>(x: &[f64], r_inf: f64, eps0: f64, rng: &mut R) -> Vec<f64> {
    let scale = 2.0 * r_inf / eps0;
    x.iter().map(|&xi| xi + sample_laplace(scale, rng)).collect()
}
