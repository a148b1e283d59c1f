//! Privacy accounting: RDP curves, adaptive composition, amplification by
//! shuffling, conversion to approximate DP, and end-to-end certification of
//! a configured mechanism.
//!
//! An [`RdpCurve`] is a privacy loss function `α ↦ ε(α)` for Rényi orders
//! `α > 1`, optionally capped at a maximum admissible order (amplification
//! lemmas only hold on a bounded range). Curves add pointwise under adaptive
//! composition and convert to an `(ε, δ)` guarantee by minimizing
//! `ε(α) + log(1/δ)/(α−1) + log(1−1/α)` over admissible orders.

use std::fmt;
use std::sync::Arc;

use crate::error::{DmeError, Result};
use crate::rr::{self, FlipProb};

/// Smallest admissible order: the conversion grid starts at `1 + 2^-8`.
const ALPHA_GRID_LO: f64 = 1.0 + 1.0 / 256.0;
/// Grid ceiling used when a curve carries no validity cap.
const ALPHA_GRID_HI: f64 = 16384.0;
/// Number of geometric grid points scanned before local refinement.
const ALPHA_GRID_POINTS: usize = 256;

/// A Rényi-DP privacy loss function `α ↦ ε(α)`, `α > 1`.
#[derive(Clone)]
pub struct RdpCurve {
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    alpha_max: Option<f64>,
}

impl fmt::Debug for RdpCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RdpCurve")
            .field("alpha_max", &self.alpha_max)
            .finish_non_exhaustive()
    }
}

impl RdpCurve {
    /// Wrap a privacy loss function. `alpha_max`, when present, is the largest
    /// order at which the function is a valid bound.
    pub fn new<F>(eval: F, alpha_max: Option<f64>) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        RdpCurve {
            eval: Arc::new(eval),
            alpha_max,
        }
    }

    /// The curve `ε(α) = rate·α`, valid for all orders.
    pub fn linear(rate: f64) -> Self {
        RdpCurve::new(move |alpha| rate * alpha, None)
    }

    pub fn alpha_max(&self) -> Option<f64> {
        self.alpha_max
    }

    /// Evaluate at order `alpha`. Orders at or below 1, and orders beyond the
    /// validity cap, are domain errors.
    pub fn eval(&self, alpha: f64) -> Result<f64> {
        if alpha.is_nan() || alpha <= 1.0 {
            return Err(DmeError::OrderOutOfRange(format!(
                "RDP is defined for orders > 1, got {alpha}"
            )));
        }
        if let Some(cap) = self.alpha_max {
            if alpha > cap {
                return Err(DmeError::OrderOutOfRange(format!(
                    "order {alpha} exceeds the curve's admissible range (max {cap})"
                )));
            }
        }
        Ok((self.eval)(alpha))
    }

    /// The curve scaled by a nonnegative factor (composition of `k` identical
    /// mechanisms is `scaled(k)`).
    pub fn scaled(&self, k: f64) -> Self {
        let inner = Arc::clone(&self.eval);
        RdpCurve {
            eval: Arc::new(move |alpha| k * inner(alpha)),
            alpha_max: self.alpha_max,
        }
    }
}

/// Pointwise sum of privacy loss functions (adaptive composition); the
/// admissible range is the intersection of the inputs' ranges.
pub fn compose(curves: &[RdpCurve]) -> Result<RdpCurve> {
    if curves.is_empty() {
        return Err(DmeError::InvalidParameter(
            "cannot compose an empty list of RDP curves".into(),
        ));
    }
    let evals: Vec<Arc<dyn Fn(f64) -> f64 + Send + Sync>> =
        curves.iter().map(|c| Arc::clone(&c.eval)).collect();
    let alpha_max = curves
        .iter()
        .filter_map(|c| c.alpha_max)
        .fold(None::<f64>, |acc, m| Some(acc.map_or(m, |a| a.min(m))));
    Ok(RdpCurve {
        eval: Arc::new(move |alpha| evals.iter().map(|f| f(alpha)).sum()),
        alpha_max,
    })
}

/// Closed-form amplification-by-shuffling bounds for `n` copies of an
/// `ε0`-LDP mechanism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Amplification {
    /// `ε(α) ≤ 2α(e^{ε0}−1)²/n`, valid while `α⁴·e^{5ε0} ≤ n/9`.
    /// Fully explicit, but the admissible range is often empty for weak
    /// local randomizers.
    Girgis,
    /// `ε(α) ≤ cα(e^{ε0}−1)²/(n·e^{ε0})`, valid for `α ≤ n/(16·ε0·e^{ε0})`.
    /// `c` is a universal constant not pinned by the statement.
    Feldman { c: f64 },
}

/// Default universal constant for [`Amplification::Feldman`]; deliberately
/// conservative.
pub const FELDMAN_DEFAULT_C: f64 = 8.0;

/// RDP curve for the shuffled output of `n` messages of an `ε0`-LDP
/// local randomizer. The returned curve carries the lemma's validity cap;
/// the cap may be below every admissible order, in which case any
/// evaluation (and conversion) fails with a range error.
pub fn shuffle_amplify(eps0: f64, n: usize, variant: Amplification) -> Result<RdpCurve> {
    if eps0 <= 0.0 || !eps0.is_finite() {
        return Err(DmeError::InvalidParameter(format!(
            "amplification needs a positive finite per-message budget, got {eps0}"
        )));
    }
    if n == 0 {
        return Err(DmeError::InvalidParameter("need n >= 1 messages".into()));
    }
    let n_f = n as f64;
    match variant {
        Amplification::Girgis => {
            let rate = 2.0 * (eps0.exp() - 1.0).powi(2) / n_f;
            let alpha_max = (n_f / (9.0 * (5.0 * eps0).exp())).powf(0.25);
            Ok(RdpCurve::new(move |alpha| rate * alpha, Some(alpha_max)))
        }
        Amplification::Feldman { c } => {
            if c.is_nan() || c <= 0.0 {
                return Err(DmeError::InvalidParameter(format!(
                    "the universal constant must be positive, got {c}"
                )));
            }
            let rate = c * (eps0.exp() - 1.0).powi(2) / (n_f * eps0.exp());
            let alpha_max = n_f / (16.0 * eps0 * eps0.exp());
            Ok(RdpCurve::new(move |alpha| rate * alpha, Some(alpha_max)))
        }
    }
}

/// An `(ε, δ)` guarantee together with the Rényi order that realized it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpGuarantee {
    pub epsilon: f64,
    pub delta: f64,
    pub alpha_star: f64,
}

/// Convert an RDP curve to an `(ε, δ)` guarantee:
/// `ε_δ = min_α ε(α) + log(1/δ)/(α−1) + log(1−1/α)`.
///
/// The minimum is taken over a 256-point geometric grid in `α−1` from
/// `1 + 2^-8` up to the curve's validity cap (or `2^14` when uncapped),
/// then refined by golden-section search around the grid minimum. The
/// `log(1−1/α)` term can drive the optimum slightly negative for near-zero
/// curves; the result is clamped at 0.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<DpGuarantee> {
    if delta.is_nan() || delta <= 0.0 || delta >= 1.0 {
        return Err(DmeError::InvalidParameter(format!(
            "delta must lie in (0,1), got {delta}"
        )));
    }
    let hi = curve.alpha_max.unwrap_or(ALPHA_GRID_HI).min(ALPHA_GRID_HI);
    if hi <= ALPHA_GRID_LO {
        return Err(DmeError::InsufficientRange(format!(
            "no admissible order in ({ALPHA_GRID_LO}, {hi}]"
        )));
    }
    let log_inv_delta = (1.0 / delta).ln();
    let objective = |alpha: f64| -> f64 {
        (curve.eval)(alpha) + log_inv_delta / (alpha - 1.0) + (1.0 - 1.0 / alpha).ln()
    };

    // Geometric sweep in (alpha - 1).
    let ratio = ((hi - 1.0) / (ALPHA_GRID_LO - 1.0)).powf(1.0 / (ALPHA_GRID_POINTS - 1) as f64);
    let mut best_idx = 0usize;
    let mut best_val = f64::INFINITY;
    let grid: Vec<f64> = (0..ALPHA_GRID_POINTS)
        .map(|i| 1.0 + (ALPHA_GRID_LO - 1.0) * ratio.powi(i as i32))
        .collect();
    for (i, &alpha) in grid.iter().enumerate() {
        let val = objective(alpha);
        if val < best_val {
            best_val = val;
            best_idx = i;
        }
    }

    // Golden-section refinement between the grid neighbors of the minimum.
    let lo_a = grid[best_idx.saturating_sub(1)];
    let hi_a = grid[(best_idx + 1).min(ALPHA_GRID_POINTS - 1)];
    let (alpha_star, val) = golden_section_min(&objective, lo_a, hi_a);
    let (alpha_star, best) = if val < best_val {
        (alpha_star, val)
    } else {
        (grid[best_idx], best_val)
    };

    Ok(DpGuarantee {
        epsilon: best.max(0.0),
        delta,
        alpha_star,
    })
}

fn golden_section_min(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - (b - a) * INV_PHI;
    let mut d = a + (b - a) * INV_PHI;
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..80 {
        if (b - a).abs() < 1e-12 * (1.0 + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (b - a) * INV_PHI;
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (b - a) * INV_PHI;
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    (mid, f(mid))
}

/// Everything the accountant needs to know about a configured mechanism:
/// each bit level is sent as `s` messages through `s` parallel shufflers,
/// every message privatized by binary randomized response with that level's
/// flip probability.
#[derive(Debug, Clone)]
pub struct MechanismConfig {
    pub n: usize,
    pub d: usize,
    pub s: usize,
    /// One flip probability per level (a single level for the plain binary
    /// mechanism; `m` levels for the bit-decomposition mechanisms).
    pub levels: Vec<FlipProb>,
    /// The total budget parameter the flip probabilities were derived from.
    pub v: f64,
}

impl MechanismConfig {
    /// Plain binary-vector mechanism: one level, per-message parameter
    /// solved directly from `v`.
    pub fn binary(n: usize, d: usize, s: usize, v: f64) -> Result<Self> {
        let p = rr::flip_prob_for_budget(v)?;
        Ok(MechanismConfig {
            n,
            d,
            s,
            levels: vec![p],
            v,
        })
    }

    /// Multi-level mechanism with explicit per-level flip probabilities.
    pub fn with_levels(n: usize, d: usize, s: usize, levels: Vec<FlipProb>, v: f64) -> Result<Self> {
        if levels.is_empty() {
            return Err(DmeError::InvalidParameter(
                "a mechanism needs at least one level".into(),
            ));
        }
        Ok(MechanismConfig {
            n,
            d,
            s,
            levels,
            v,
        })
    }
}

/// Privacy target for [`certify`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CertifyTarget {
    Ldp { eps0: f64 },
    Mms { eps: f64, delta: f64 },
}

/// Per-level row in a certification report.
#[derive(Debug, Clone)]
pub struct LevelReport {
    /// 1-based level index.
    pub level: usize,
    pub flip_prob: f64,
    /// LDP of a single message at this level: `log((1−p)/p)`.
    pub message_ldp: f64,
    /// LDP contribution of the whole level (`s` messages).
    pub level_ldp: f64,
    /// Linear RDP rate contributed by this level's `s` shuffled channels:
    /// `s·(1−2p)²/(n·p(1−p))`.
    pub rdp_rate: f64,
}

#[derive(Debug, Clone)]
pub struct CertificationReport {
    pub mode: &'static str,
    pub n: usize,
    pub d: usize,
    pub s: usize,
    pub m: usize,
    pub v: f64,
    pub target_eps: f64,
    pub target_delta: Option<f64>,
    /// The certified privacy parameter (must not exceed `target_eps`).
    pub achieved_eps: f64,
    /// Order realizing the RDP→DP conversion, when one was performed.
    pub alpha_star: Option<f64>,
    /// MMS only: `2·sqrt(ρ·log(1/δ))` on the composed linear rate ρ.
    pub closed_form_eps: Option<f64>,
    /// MMS only: full conversion of the composed linear curve.
    pub converted_eps: Option<f64>,
    /// MMS only: conversion through the explicit Girgis lemma, when its
    /// admissible order range is non-empty at these parameters.
    pub girgis_eps: Option<f64>,
    pub levels: Vec<LevelReport>,
    pub notes: Vec<String>,
}

impl CertificationReport {
    /// Fixed machine-readable record:
    /// `mode,n,d,s,m,v,eps_target,delta,eps_achieved,alpha_star`.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.mode,
            self.n,
            self.d,
            self.s,
            self.m,
            self.v,
            self.target_eps,
            self.target_delta.map_or(String::new(), |d| d.to_string()),
            self.achieved_eps,
            self.alpha_star.map_or(String::new(), |a| a.to_string()),
        )
    }

    pub const CSV_HEADER: &'static str =
        "mode,n,d,s,m,v,eps_target,delta,eps_achieved,alpha_star";
}

/// Certify a configured mechanism against a privacy target.
///
/// LDP mode sums the per-level composition `Σ_k s·log((1−p_k)/p_k)` and
/// requires it not to exceed the target `ε0`.
///
/// MMS mode composes the per-level, per-channel shuffled RDP rates
/// `s·(1−2p_k)²/(n·p_k(1−p_k))` into one linear curve, converts it both in
/// closed form (`2√(ρ·log(1/δ))`) and through [`rdp_to_dp`], and certifies
/// the smaller of the two. The explicit Girgis-lemma route is attempted as
/// a cross-check and reported when its order range is non-empty; it is not
/// the certification criterion because its range is empty for the
/// per-message budgets these mechanisms run at.
pub fn certify(cfg: &MechanismConfig, target: CertifyTarget) -> Result<CertificationReport> {
    if cfg.n == 0 || cfg.s == 0 {
        return Err(DmeError::InvalidParameter(
            "certification needs n >= 1 and s >= 1".into(),
        ));
    }
    let n_f = cfg.n as f64;
    let s_f = cfg.s as f64;

    let levels: Vec<LevelReport> = cfg
        .levels
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let pv = p.get();
            let message_ldp = rr::ldp_epsilon(*p);
            let rate = if pv == 0.0 {
                f64::INFINITY
            } else {
                s_f * (1.0 - 2.0 * pv).powi(2) / (n_f * pv * (1.0 - pv))
            };
            LevelReport {
                level: i + 1,
                flip_prob: pv,
                message_ldp,
                level_ldp: s_f * message_ldp,
                rdp_rate: rate,
            }
        })
        .collect();

    match target {
        CertifyTarget::Ldp { eps0 } => {
            let achieved: f64 = levels.iter().map(|l| l.level_ldp).sum();
            let report = CertificationReport {
                mode: "ldp",
                n: cfg.n,
                d: cfg.d,
                s: cfg.s,
                m: cfg.levels.len(),
                v: cfg.v,
                target_eps: eps0,
                target_delta: None,
                achieved_eps: achieved,
                alpha_star: None,
                closed_form_eps: None,
                converted_eps: None,
                girgis_eps: None,
                levels,
                notes: Vec::new(),
            };
            if achieved > eps0 * (1.0 + 1e-9) + 1e-12 {
                return Err(DmeError::CertificationFailed {
                    achieved,
                    target: eps0,
                });
            }
            Ok(report)
        }
        CertifyTarget::Mms { eps, delta } => {
            if delta.is_nan() || delta <= 0.0 || delta >= 1.0 {
                return Err(DmeError::InvalidParameter(format!(
                    "delta must lie in (0,1), got {delta}"
                )));
            }
            let rho: f64 = levels.iter().map(|l| l.rdp_rate).sum();
            let mut notes = Vec::new();
            let closed = 2.0 * (rho * (1.0 / delta).ln()).sqrt();
            let converted = rdp_to_dp(&RdpCurve::linear(rho), delta)?;
            notes.push(format!(
                "conversion grid: {ALPHA_GRID_POINTS} geometric orders in \
                 ({ALPHA_GRID_LO}, {ALPHA_GRID_HI}], golden-section refined"
            ));
            let achieved = closed.min(converted.epsilon);

            // Cross-check through the explicit amplification lemma; usually
            // unavailable because the per-message LDP is large.
            let girgis_eps = girgis_route(&levels, cfg.n, cfg.s, delta, &mut notes);

            let report = CertificationReport {
                mode: "mms",
                n: cfg.n,
                d: cfg.d,
                s: cfg.s,
                m: cfg.levels.len(),
                v: cfg.v,
                target_eps: eps,
                target_delta: Some(delta),
                achieved_eps: achieved,
                alpha_star: Some(converted.alpha_star),
                closed_form_eps: Some(closed),
                converted_eps: Some(converted.epsilon),
                girgis_eps,
                levels,
                notes,
            };
            if achieved > eps * (1.0 + 1e-9) + 1e-12 {
                return Err(DmeError::CertificationFailed {
                    achieved,
                    target: eps,
                });
            }
            Ok(report)
        }
    }
}

fn girgis_route(
    levels: &[LevelReport],
    n: usize,
    s: usize,
    delta: f64,
    notes: &mut Vec<String>,
) -> Option<f64> {
    let mut curves = Vec::with_capacity(levels.len());
    for l in levels {
        if !l.message_ldp.is_finite() || l.message_ldp <= 0.0 {
            notes.push(format!(
                "level {}: per-message LDP {} outside the amplification lemma's domain",
                l.level, l.message_ldp
            ));
            return None;
        }
        match shuffle_amplify(l.message_ldp, n, Amplification::Girgis) {
            Ok(c) => curves.push(c.scaled(s as f64)),
            Err(e) => {
                notes.push(format!("level {}: {e}", l.level));
                return None;
            }
        }
    }
    match compose(&curves).and_then(|c| rdp_to_dp(&c, delta)) {
        Ok(g) => Some(g.epsilon),
        Err(e) => {
            notes.push(format!("explicit amplification route unavailable: {e}"));
            None
        }
    }
}
