//! Lower-bound overlay evaluators for plots.
//!
//! These evaluate the max-form lower bounds with unit constants (the true
//! constants are not known), so outputs are labeled shape-only and are meant
//! as overlays, never as acceptance thresholds.

use dme_core::{DmeError, Result};

pub const SHAPE_ONLY_LABEL: &str = "shape only";

/// Central-model lower bound for the ℓ2 ball, unit constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentralLowerBound {
    /// `r2²·max{d/(n²ε²), 1/(n·4^{b/d})}`: communication-rich branch (b ≥ d).
    pub high_rate_branch: Option<f64>,
    /// `r2²·d·max{1/(n²ε²), 1/(nb)}`: communication-poor branch (b ≤ d).
    pub low_rate_branch: Option<f64>,
    /// The applicable branch; at `b = d` both are evaluated and this is
    /// their maximum.
    pub value: f64,
}

pub fn central_lower_bound(
    n: usize,
    d: usize,
    eps: f64,
    b_bits: usize,
    r2: f64,
) -> Result<CentralLowerBound> {
    if n == 0 || d == 0 || b_bits == 0 {
        return Err(DmeError::InvalidParameter(
            "need n, d, b >= 1".into(),
        ));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(DmeError::InvalidParameter(format!(
            "need eps > 0, got {eps}"
        )));
    }
    let n_f = n as f64;
    let d_f = d as f64;
    let r2sq = r2 * r2;
    let high = r2sq
        * (d_f / (n_f * n_f * eps * eps)).max(1.0 / (n_f * 4.0f64.powf(b_bits as f64 / d_f)));
    let low = r2sq * d_f * (1.0 / (n_f * n_f * eps * eps)).max(1.0 / (n_f * b_bits as f64));
    Ok(match b_bits.cmp(&d) {
        std::cmp::Ordering::Greater => CentralLowerBound {
            high_rate_branch: Some(high),
            low_rate_branch: None,
            value: high,
        },
        std::cmp::Ordering::Less => CentralLowerBound {
            high_rate_branch: None,
            low_rate_branch: Some(low),
            value: low,
        },
        std::cmp::Ordering::Equal => CentralLowerBound {
            high_rate_branch: Some(high),
            low_rate_branch: Some(low),
            value: high.max(low),
        },
    })
}

/// Local-model lower bound for the ℓ2 ball, unit constants:
/// `r2²·d/(n·min{ε0², ε0, b})`.
pub fn ldp_lower_bound(n: usize, d: usize, eps0: f64, b_bits: usize, r2: f64) -> Result<f64> {
    if n == 0 || d == 0 || b_bits == 0 {
        return Err(DmeError::InvalidParameter("need n, d, b >= 1".into()));
    }
    if eps0.is_nan() || eps0 <= 0.0 {
        return Err(DmeError::InvalidParameter(format!(
            "need eps0 > 0, got {eps0}"
        )));
    }
    let denom = (eps0 * eps0).min(eps0).min(b_bits as f64);
    Ok(r2 * r2 * d as f64 / (n as f64 * denom))
}
