//! Unbiased binary randomized response.
//!
//! A bit `b` is flipped with probability `p` and the result rescaled to
//! `(b' − p)/(1 − 2p)`, which makes the output an exactly unbiased estimate
//! of `b` supported on the two points `{−p/(1−2p), (1−p)/(1−2p)}`. The flip
//! probability fully determines the LDP level `log((1−p)/p)`, the RDP curve,
//! and the variance `p(1−p)/(1−2p)²`.

use rand::Rng;

use crate::accounting::RdpCurve;
use crate::error::{DmeError, Result};

/// Flip probabilities this close to 1/2 are treated as degenerate: the
/// unbiasing factor `1/(1−2p)` is singular there and the estimator is
/// undefined.
pub const DEGENERATE_MARGIN: f64 = 1e-12;

/// Public flip probability of the randomizer.
///
/// Admits the closed interval `[0, 1/2]`; the right endpoint is only ever
/// produced by a zero privacy budget and is flagged degenerate; estimating
/// operations reject it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlipProb(f64);

impl FlipProb {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&p) {
            return Err(DmeError::InvalidParameter(format!(
                "flip probability must lie in [0, 1/2], got {p}"
            )));
        }
        Ok(FlipProb(p))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// True when the two-point support collapses (`p` at or next to 1/2).
    pub fn is_degenerate(self) -> bool {
        self.0 >= 0.5 - DEGENERATE_MARGIN
    }

    /// The two support points `(low, high) = (−p/(1−2p), (1−p)/(1−2p))`.
    pub fn support(self) -> Result<(f64, f64)> {
        if self.is_degenerate() {
            return Err(DmeError::InvalidParameter(
                "flip probability 1/2 has no two-point support (estimator undefined)".into(),
            ));
        }
        let denom = 1.0 - 2.0 * self.0;
        Ok((-self.0 / denom, (1.0 - self.0) / denom))
    }
}

/// One randomized-response output, carrying the public parameter it was
/// produced under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivateBit {
    value: f64,
    /// Which of the two support points was emitted (`true` = high point).
    /// This single bit, together with the public `p`, reconstructs `value`.
    support_high: bool,
    p: FlipProb,
}

impl PrivateBit {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn support_high(&self) -> bool {
        self.support_high
    }

    pub fn flip_prob(&self) -> FlipProb {
        self.p
    }

    /// Rebuild an output from its support selector and public parameter
    /// (the analyzer-side inverse of serialization).
    pub fn from_support_bit(high: bool, p: FlipProb) -> Result<Self> {
        let (lo, hi) = p.support()?;
        Ok(PrivateBit {
            value: if high { hi } else { lo },
            support_high: high,
            p,
        })
    }

    /// Deterministic branch of the randomizer given the coin: the effective
    /// bit is `b` when the coin is clear and `1 − b` when it flips.
    fn from_coin(bit: u8, flip: bool, p: FlipProb) -> Result<Self> {
        let (lo, hi) = p.support()?;
        let effective = (bit == 1) != flip;
        Ok(PrivateBit {
            value: if effective { hi } else { lo },
            support_high: effective,
            p,
        })
    }
}

/// Randomize one bit: with probability `1−p` emit `(b−p)/(1−2p)`, otherwise
/// `(1−b−p)/(1−2p)`. The expectation over the coin equals `b` exactly.
pub fn randomize_bit<R: Rng + ?Sized>(bit: u8, p: FlipProb, rng: &mut R) -> Result<PrivateBit> {
    if bit > 1 {
        return Err(DmeError::InvalidParameter(format!(
            "input bit must be 0 or 1, got {bit}"
        )));
    }
    let flip = rng.gen_bool(p.get());
    PrivateBit::from_coin(bit, flip, p)
}

/// Exact variance of the randomizer: `p(1−p)/(1−2p)²`, independent of the
/// input bit.
pub fn mse(p: FlipProb) -> Result<f64> {
    if p.is_degenerate() {
        return Err(DmeError::InvalidParameter(
            "variance is unbounded at flip probability 1/2".into(),
        ));
    }
    let pv = p.get();
    Ok(pv * (1.0 - pv) / (1.0 - 2.0 * pv).powi(2))
}

/// Local DP level of the randomizer: `log((1−p)/p)`.
///
/// `p = 0` is the identity randomizer and returns `f64::INFINITY` as a
/// documented sentinel rather than an error; `p = 1/2` returns 0.
pub fn ldp_epsilon(p: FlipProb) -> f64 {
    let pv = p.get();
    if pv == 0.0 {
        return f64::INFINITY;
    }
    ((1.0 - pv) / pv).ln()
}

/// Solve the flip probability for an LDP budget: `p = ½(1 − √(v²/(v²+4)))`,
/// which guarantees `log((1−p)/p) ≤ v`.
///
/// `v = 0` yields the degenerate `p = 1/2` (fair coin); callers that need an
/// estimator must check [`FlipProb::is_degenerate`].
pub fn flip_prob_for_budget(v: f64) -> Result<FlipProb> {
    if v.is_nan() || v < 0.0 {
        return Err(DmeError::InvalidParameter(format!(
            "privacy budget must be nonnegative, got {v}"
        )));
    }
    if v == f64::INFINITY {
        return FlipProb::new(0.0);
    }
    let p = 0.5 * (1.0 - (v * v / (v * v + 4.0)).sqrt());
    FlipProb::new(p)
}

/// RDP curve of the randomizer:
/// `ε(α) = log(p^α (1−p)^{1−α} + p^{1−α} (1−p)^α) / (α−1)` for `α > 1`.
///
/// Evaluated in log space so large orders do not underflow. As `α → ∞` the
/// curve approaches [`ldp_epsilon`]; it is 0 identically at `p = 1/2`.
pub fn rdp_curve(p: FlipProb) -> Result<RdpCurve> {
    let pv = p.get();
    if pv == 0.0 {
        return Err(DmeError::InvalidParameter(
            "the identity randomizer has no finite RDP curve".into(),
        ));
    }
    let lp = pv.ln();
    let lq = (1.0 - pv).ln();
    Ok(RdpCurve::new(
        move |alpha| {
            let t1 = alpha * lp + (1.0 - alpha) * lq;
            let t2 = (1.0 - alpha) * lp + alpha * lq;
            log_sum_exp(t1, t2) / (alpha - 1.0)
        },
        None,
    ))
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn fp(p: f64) -> FlipProb {
        FlipProb::new(p).unwrap()
    }

    #[test]
    fn zero_flip_prob_is_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(randomize_bit(1, fp(0.0), &mut rng).unwrap().value(), 1.0);
            assert_eq!(randomize_bit(0, fp(0.0), &mut rng).unwrap().value(), 0.0);
        }
    }

    #[test]
    fn forced_flip_branch() {
        // b = 0 with the coin forced to flip: (1 − 0 − 0.25)/0.5 = 1.5.
        let out = PrivateBit::from_coin(0, true, fp(0.25)).unwrap();
        assert_eq!(out.value(), 1.5);
        assert!(out.support_high());
        let out = PrivateBit::from_coin(1, false, fp(0.25)).unwrap();
        assert_eq!(out.value(), 1.5);
    }

    #[test]
    fn outputs_live_on_the_exact_support() {
        let p = fp(0.3);
        let (lo, hi) = p.support().unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for bit in [0u8, 1] {
            for _ in 0..1000 {
                let y = randomize_bit(bit, p, &mut rng).unwrap();
                assert!(y.value() == lo || y.value() == hi);
                assert_eq!(y.support_high(), y.value() == hi);
            }
        }
    }

    #[test]
    fn unbiased_and_variance_matches_formula() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let trials = 100_000;
        for &p in &[0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45] {
            let fpp = fp(p);
            let sigma2 = mse(fpp).unwrap();
            for bit in [0u8, 1] {
                let mut sum = 0.0;
                let mut sumsq = 0.0;
                for _ in 0..trials {
                    let y = randomize_bit(bit, fpp, &mut rng).unwrap().value();
                    sum += y;
                    sumsq += y * y;
                }
                let mean = sum / trials as f64;
                let var = sumsq / trials as f64 - mean * mean;
                let tol = 4.0 * (sigma2 / trials as f64).sqrt();
                assert!(
                    (mean - bit as f64).abs() <= tol,
                    "p={p} b={bit}: mean {mean} off by more than {tol}"
                );
                assert!(
                    (var - sigma2).abs() <= 0.05 * sigma2,
                    "p={p} b={bit}: var {var} vs {sigma2}"
                );
            }
        }
    }

    #[test]
    fn mse_values() {
        assert_eq!(mse(fp(0.0)).unwrap(), 0.0);
        assert!((mse(fp(0.25)).unwrap() - 0.75).abs() < 1e-15);
        assert!((mse(fp(0.4)).unwrap() - 6.0).abs() < 1e-12);
        assert!(mse(fp(0.5)).is_err());
    }

    #[test]
    fn ldp_values() {
        assert!((ldp_epsilon(fp(0.25)) - 3.0_f64.ln()).abs() < 1e-15);
        assert!((ldp_epsilon(fp(0.1)) - 9.0_f64.ln()).abs() < 1e-15);
        assert_eq!(ldp_epsilon(fp(0.0)), f64::INFINITY);
        assert!(ldp_epsilon(fp(0.5 - 1e-9)) < 1e-8);
    }

    #[test]
    fn budget_solution_values() {
        let p = flip_prob_for_budget(0.0).unwrap();
        assert_eq!(p.get(), 0.5);
        assert!(p.is_degenerate());

        let p = flip_prob_for_budget(2.0).unwrap();
        assert!((p.get() - 0.14644660940672627).abs() < 1e-15);
        let e = ldp_epsilon(p);
        assert!(e <= 2.0);
        assert!((e - 1.7627471740390872).abs() < 1e-12);

        let p = flip_prob_for_budget(1.0).unwrap();
        assert!((p.get() - 0.27639320225002106).abs() < 1e-15);
        let e = ldp_epsilon(p);
        assert!(e <= 1.0);
        assert!((e - 0.9624236501192069).abs() < 1e-12);

        assert!(flip_prob_for_budget(-0.1).is_err());
    }

    #[test]
    fn budget_lemma_on_grid() {
        // log((1−p(v))/p(v)) = 2·asinh(v/2) ≤ v, with the gap vanishing as v → 0.
        let mut prev_gap = f64::INFINITY;
        for i in (1..=50).rev() {
            let v = 10.0 * i as f64 / 50.0;
            let p = flip_prob_for_budget(v).unwrap();
            let eps = ldp_epsilon(p);
            assert!(eps <= v + 1e-12, "v={v}: {eps} > {v}");
            let oracle = 2.0 * (v / 2.0).asinh();
            assert!((eps - oracle).abs() <= 1e-12 * oracle.max(1.0));
            let gap = v - eps;
            assert!(gap <= prev_gap + 1e-15, "gap not shrinking at v={v}");
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-3); // gap at v = 0.2 is ~v³/24
    }

    #[test]
    fn monotonicity() {
        let mut last = f64::INFINITY;
        for i in 1..50 {
            let p = fp(i as f64 / 100.0);
            let e = ldp_epsilon(p);
            assert!(e < last);
            last = e;
        }
        let mut last_p = 0.5 + 1e-12;
        for i in 1..=50 {
            let v = i as f64 / 5.0;
            let p = flip_prob_for_budget(v).unwrap().get();
            assert!(p < last_p, "flip prob not decreasing at v={v}");
            last_p = p;
        }
    }

    #[test]
    fn rdp_value_and_bounds() {
        let curve = rdp_curve(fp(0.25)).unwrap();
        let got = curve.eval(2.0).unwrap();
        let want = (0.25f64.powi(2) / 0.75 + 0.75f64.powi(2) / 0.25).ln();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.8472978603872037).abs() < 1e-12);

        // Dominated by the pure-DP level at any order, approached as α → ∞.
        for &p in &[0.05, 0.2, 0.35, 0.49] {
            let c = rdp_curve(fp(p)).unwrap();
            let e0 = ldp_epsilon(fp(p));
            for alpha in [1.5, 2.0, 4.0, 16.0] {
                assert!(c.eval(alpha).unwrap() <= e0 + 1e-12);
            }
            assert!((c.eval(1e6).unwrap() - e0).abs() < 1e-4 * e0.max(1e-6));
        }

        // Near-fair coin: essentially zero loss at every order.
        let c = rdp_curve(fp(0.5 - 1e-12)).unwrap();
        for alpha in [1.5, 2.0, 4.0, 16.0, 256.0] {
            assert!(c.eval(alpha).unwrap().abs() < 1e-9);
        }

        assert!(curve.eval(1.0).is_err());
        assert!(curve.eval(0.5).is_err());
        assert!(rdp_curve(fp(0.0)).is_err());
    }

    #[test]
    fn degenerate_rejected_by_estimator() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        assert!(randomize_bit(1, fp(0.5), &mut rng).is_err());
        assert!(randomize_bit(2, fp(0.1), &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn support_membership(p in 0.0..0.49f64, bit in 0u8..=1, seed in any::<u64>()) {
            let fpp = fp(p);
            let (lo, hi) = fpp.support().unwrap();
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let y = randomize_bit(bit, fpp, &mut rng).unwrap();
            prop_assert!(y.value() == lo || y.value() == hi);
        }

        #[test]
        fn budget_lemma_holds_everywhere(v in 1e-6..50.0f64) {
            let p = flip_prob_for_budget(v).unwrap();
            prop_assert!(ldp_epsilon(p) <= v + 1e-9);
        }
    }
}
