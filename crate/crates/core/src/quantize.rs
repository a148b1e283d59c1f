//! Unbiased stochastic binary decomposition of `[0,1]^d` vectors.
//!
//! A value is expanded into `m−1` deterministic binary-expansion bits plus a
//! Bernoulli top-up bit whose bias absorbs the truncated tail, so the
//! reconstruction `Σ_{k<m} b^(k)·2^{−k} + u·2^{−m+1}` has expectation exactly
//! equal to the input and per-coordinate variance at most `4^{−m}`.

use rand::Rng;

use crate::binary::BinaryVector;
use crate::error::{DmeError, Result};

/// Slack admitted when validating that entries lie in `[0, 1]`; values inside
/// the slack are clamped before decomposition.
pub const UNIT_TOL: f64 = 1e-12;

/// A vector with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector01 {
    values: Vec<f64>,
}

impl UnitVector01 {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(DmeError::InvalidParameter(
                "unit vector must have positive dimension".into(),
            ));
        }
        for &x in &values {
            if !(-UNIT_TOL..=1.0 + UNIT_TOL).contains(&x) {
                return Err(DmeError::InvalidParameter(format!(
                    "entry {x} outside [0, 1]"
                )));
            }
        }
        let values = values.into_iter().map(|x| x.clamp(0.0, 1.0)).collect();
        Ok(UnitVector01 { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// The `m`-level decomposition of a vector: `m−1` deterministic bit levels
/// and the Bernoulli top-up level.
#[derive(Debug, Clone)]
pub struct BitDecomposition {
    /// Levels `1..m`; level `k` carries weight `2^{−k}`.
    pub levels: Vec<BinaryVector>,
    /// Top-up bits, weight `2^{−m+1}`.
    pub top_up: BinaryVector,
    pub m: usize,
}

/// Decompose `z` into `m` levels. The deterministic levels are a pure
/// function of `z`; only the top-up bit consumes randomness.
pub fn decompose<R: Rng + ?Sized>(z: &UnitVector01, m: usize, rng: &mut R) -> Result<BitDecomposition> {
    if m == 0 {
        return Err(DmeError::InvalidParameter("need m >= 1 levels".into()));
    }
    let d = z.dim();
    let mut levels: Vec<Vec<u8>> = vec![vec![0u8; d]; m - 1];
    let mut prefix = vec![0.0f64; d];
    for k in 1..m {
        let scale = (1u64 << k) as f64;
        let weight = 0.5f64.powi(k as i32);
        for j in 0..d {
            // Floating-point guard: a remainder one ulp above an exact power
            // of two must not produce a 2-bit.
            let bit = (scale * (z.values[j] - prefix[j])).floor().clamp(0.0, 1.0);
            levels[k - 1][j] = bit as u8;
            prefix[j] += bit * weight;
        }
    }
    let top_scale = (1u64 << (m - 1)) as f64;
    let mut top = vec![0u8; d];
    for j in 0..d {
        let bias = (top_scale * (z.values[j] - prefix[j])).clamp(0.0, 1.0);
        top[j] = rng.gen_bool(bias) as u8;
    }
    Ok(BitDecomposition {
        levels: levels
            .into_iter()
            .map(|bits| BinaryVector::new(bits).expect("bits are 0/1"))
            .collect(),
        top_up: BinaryVector::new(top).expect("bits are 0/1"),
        m,
    })
}

/// Linear reconstruction `Σ_{k<m} b^(k)·2^{−k} + u·2^{−m+1}`.
pub fn reconstruct(dec: &BitDecomposition) -> Vec<f64> {
    let d = dec.top_up.dim();
    let mut out = vec![0.0f64; d];
    for (k, level) in dec.levels.iter().enumerate() {
        let weight = 0.5f64.powi(k as i32 + 1);
        for (j, o) in out.iter_mut().enumerate() {
            *o += level.get(j) as f64 * weight;
        }
    }
    let top_weight = 0.5f64.powi(dec.m as i32 - 1);
    for (j, o) in out.iter_mut().enumerate() {
        *o += dec.top_up.get(j) as f64 * top_weight;
    }
    out
}

/// Worst-case mean-squared reconstruction error: `d·4^{−m}`.
pub fn mse_bound(d: usize, m: usize) -> f64 {
    d as f64 * 0.25f64.powi(m as i32)
}
