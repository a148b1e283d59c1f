//! Mean estimation of bounded ℓ2-norm vectors.
//!
//! Each vector is rotated by `U = (1/√D)·H·S`, where `H` is the Hadamard
//! matrix on the padded power-of-two dimension `D` and `S` a random sign
//! diagonal derived from a public seed shared by all clients and the server.
//! The rotation preserves the ℓ2 norm and flattens the vector so every
//! coordinate fits inside `r∞ = 10·r2·√(log(dn/β)/d)` with probability at
//! least `1−β`; coordinates outside are clipped (the clip count is surfaced
//! for observability), and the clipped vector goes through the ℓ∞ mechanism.
//! The analyzer applies the inverse rotation and drops the padding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::binary::Message;
use crate::error::{DmeError, Result};
use crate::linf::{self, BudgetAllocation, LinfBundle, LinfConfig, PrivacyMode};

/// Public seed deriving the shared sign diagonal, plus the padded dimension.
/// The same seed yields the same diagonal everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationSeed {
    pub seed: u64,
    pub d_pow2: usize,
    signs: Vec<f64>,
}

impl RotationSeed {
    pub fn new(seed: u64, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(DmeError::InvalidParameter(
                "rotation needs a positive dimension".into(),
            ));
        }
        let d_pow2 = d.next_power_of_two();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let signs = (0..d_pow2)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        Ok(RotationSeed {
            seed,
            d_pow2,
            signs,
        })
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }
}

/// In-place fast Walsh–Hadamard transform (unnormalized); length must be a
/// power of two.
pub fn fwht(v: &mut [f64]) {
    debug_assert!(v.len().is_power_of_two());
    let mut h = 1;
    while h < v.len() {
        for block in v.chunks_exact_mut(2 * h) {
            let (a, b) = block.split_at_mut(h);
            for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                let u = *x;
                let w = *y;
                *x = u + w;
                *y = u - w;
            }
        }
        h *= 2;
    }
}

/// Clamp every coordinate into `[−r∞, r∞]`; returns the clipped vector and
/// how many coordinates moved.
pub fn clip_coords(w: &[f64], r_inf: f64) -> (Vec<f64>, usize) {
    let mut count = 0;
    let clipped = w
        .iter()
        .map(|&x| {
            if x.abs() > r_inf {
                count += 1;
                x.clamp(-r_inf, r_inf)
            } else {
                x
            }
        })
        .collect();
    (clipped, count)
}

/// Configuration for the ℓ2 mechanism: the derived ℓ∞ configuration runs on
/// the padded dimension, while the clipping radius uses the original one.
#[derive(Debug, Clone, PartialEq)]
pub struct L2Config {
    pub d: usize,
    pub n: usize,
    pub r2: f64,
    pub beta: f64,
    pub rotation: RotationSeed,
    /// Inner ℓ∞ configuration on the padded dimension with the derived
    /// radius `10·r2·√(log(dn/β)/d)`.
    pub inner: LinfConfig,
}

impl L2Config {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d: usize,
        n: usize,
        m: usize,
        s: usize,
        v: f64,
        r2: f64,
        beta: f64,
        rotation_seed: u64,
        mode: PrivacyMode,
    ) -> Result<Self> {
        if r2 <= 0.0 || !r2.is_finite() {
            return Err(DmeError::InvalidParameter(format!(
                "radius must be positive and finite, got {r2}"
            )));
        }
        if beta.is_nan() || beta <= 0.0 || beta >= 1.0 {
            return Err(DmeError::InvalidParameter(format!(
                "confidence beta must lie in (0,1), got {beta}"
            )));
        }
        let rotation = RotationSeed::new(rotation_seed, d)?;
        let r_inf = derived_radius(d, n, r2, beta);
        let inner = LinfConfig::new(rotation.d_pow2, n, m, s, v, r_inf, mode)?;
        Ok(L2Config {
            d,
            n,
            r2,
            beta,
            rotation,
            inner,
        })
    }

    pub fn allocation(&self) -> Result<BudgetAllocation> {
        self.inner.allocation()
    }

    pub fn payload_bits(&self) -> u64 {
        self.inner.payload_bits()
    }

    /// Rotate into the flattened domain: `(1/√D)·H·(S·x_padded)`.
    /// Norm-preserving; inputs outside the ℓ2 ball are rejected.
    pub fn rotate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d {
            return Err(DmeError::InvalidParameter(format!(
                "input dimension {} does not match config dimension {}",
                x.len(),
                self.d
            )));
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > self.r2 * (1.0 + 1e-9) {
            return Err(DmeError::InputOutsideDomain(format!(
                "‖x‖₂ = {norm} exceeds the declared radius {}",
                self.r2
            )));
        }
        let d_pow2 = self.rotation.d_pow2;
        let mut w = vec![0.0f64; d_pow2];
        for (j, &xj) in x.iter().enumerate() {
            w[j] = xj * self.rotation.signs[j];
        }
        fwht(&mut w);
        let scale = 1.0 / (d_pow2 as f64).sqrt();
        for wj in &mut w {
            *wj *= scale;
        }
        Ok(w)
    }

    /// Inverse rotation back to the padded input domain:
    /// `S·(1/√D)·H·w` (the transform is its own inverse up to scale).
    pub fn unrotate(&self, w: &[f64]) -> Result<Vec<f64>> {
        let d_pow2 = self.rotation.d_pow2;
        if w.len() != d_pow2 {
            return Err(DmeError::InvalidParameter(format!(
                "rotated dimension {} does not match padded dimension {d_pow2}",
                w.len()
            )));
        }
        let mut x = w.to_vec();
        fwht(&mut x);
        let scale = 1.0 / (d_pow2 as f64).sqrt();
        for (j, xj) in x.iter_mut().enumerate() {
            *xj *= scale * self.rotation.signs[j];
        }
        Ok(x)
    }

    /// Rotate, clip, and privatize one client's vector. Returns the bundle
    /// and the number of clipped coordinates (nonzero with probability at
    /// most β over the rotation randomness).
    pub fn randomize<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        alloc: &BudgetAllocation,
        rng: &mut R,
    ) -> Result<(LinfBundle, usize)> {
        let w = self.rotate(x)?;
        let (clipped, clip_count) = clip_coords(&w, self.inner.r_inf);
        let bundle = linf::randomize(&clipped, &self.inner, alloc, rng)?;
        Ok((bundle, clip_count))
    }

    /// Aggregate bundles, inverse-rotate, and truncate to the original
    /// dimension. A seed mismatch between clients and server is undetectable
    /// by construction; all parties must share the configuration.
    pub fn analyze(&self, bundles: &[LinfBundle], alloc: &BudgetAllocation) -> Result<Vec<f64>> {
        let w_hat = linf::analyze(bundles, &self.inner, alloc)?;
        let mut x_hat = self.unrotate(&w_hat)?;
        x_hat.truncate(self.d);
        Ok(x_hat)
    }

    /// Analyzer entry point for shuffled per-level message multisets.
    pub fn analyze_level_messages(
        &self,
        levels: &[Vec<Message>],
        alloc: &BudgetAllocation,
        n: usize,
    ) -> Result<Vec<f64>> {
        let w_hat = linf::analyze_level_messages(levels, &self.inner, alloc, n)?;
        let mut x_hat = self.unrotate(&w_hat)?;
        x_hat.truncate(self.d);
        Ok(x_hat)
    }
}

/// The clipping radius `10·r2·√(log(dn/β)/d)` (original dimension `d`).
pub fn derived_radius(d: usize, n: usize, r2: f64, beta: f64) -> f64 {
    10.0 * r2 * ((d as f64 * n as f64 / beta).ln() / d as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn config(d: usize, n: usize, m: usize, s: usize, v: f64) -> L2Config {
        L2Config::new(d, n, m, s, v, 1.0, 0.01, 1234, PrivacyMode::Ldp).unwrap()
    }

    #[test]
    fn two_dim_hadamard_by_hand() {
        // Pin the sign diagonal to the identity so the 2x2 transform is
        // checkable by hand.
        let mut cfg = config(2, 1, 1, 1, 1.0);
        cfg.rotation.signs = vec![1.0, 1.0];
        let w = cfg.rotate(&[1.0, 0.0]).unwrap();
        assert!((w[0] - 1.0 / 2.0f64.sqrt()).abs() < 1e-15);
        assert!((w[1] - 1.0 / 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_maps_to_zero() {
        let cfg = config(5, 1, 1, 1, 1.0);
        let w = cfg.rotate(&[0.0; 5]).unwrap();
        assert!(w.iter().all(|&x| x == 0.0));
        assert_eq!(w.len(), 8);
    }

    #[test]
    fn rotation_preserves_norm_and_inverts() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for &d in &[1usize, 2, 3, 8, 13, 64] {
            let cfg = config(d, 10, 1, 1, 1.0);
            for _ in 0..100 {
                let mut x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1.0 {
                    for v in &mut x {
                        *v /= norm;
                    }
                }
                let w = cfg.rotate(&x).unwrap();
                let wnorm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((wnorm - xnorm).abs() <= 1e-9 * xnorm.max(1.0));

                let back = cfg.unrotate(&w).unwrap();
                for j in 0..d {
                    assert!((back[j] - x[j]).abs() <= 1e-9);
                }
                for &pad in &back[d..] {
                    assert!(pad.abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_signs() {
        let a = RotationSeed::new(42, 10).unwrap();
        let b = RotationSeed::new(42, 10).unwrap();
        assert_eq!(a, b);
        let c = RotationSeed::new(43, 10).unwrap();
        assert_ne!(a.signs(), c.signs());
    }

    #[test]
    fn clipping_counts() {
        let (w, c) = clip_coords(&[0.5, -0.5], 1.0);
        assert_eq!((w, c), (vec![0.5, -0.5], 0));
        let (w, c) = clip_coords(&[2.0], 1.0);
        assert_eq!((w, c), (vec![1.0], 1));
        let (w, c) = clip_coords(&[-3.0, 0.1, 1.5], 1.0);
        assert_eq!((w, c), (vec![-1.0, 0.1, 1.0], 2));
    }

    #[test]
    fn concentration_rarely_clips() {
        // Random unit vectors at d = 64, n = 100, beta = 0.01: the clip event
        // must occur in at most a beta fraction of trials (one-sided check).
        let d = 64;
        let cfg = L2Config::new(d, 100, 1, 1, 1.0, 1.0, 0.01, 7, PrivacyMode::Ldp).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let trials = 1000;
        let mut clipped_trials = 0;
        for t in 0..trials {
            let seed_cfg =
                L2Config::new(d, 100, 1, 1, 1.0, 1.0, 0.01, t as u64, PrivacyMode::Ldp).unwrap();
            let mut any = false;
            for _ in 0..100 {
                let mut x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                for v in &mut x {
                    *v /= norm;
                }
                let w = seed_cfg.rotate(&x).unwrap();
                if clip_coords(&w, seed_cfg.inner.r_inf).1 > 0 {
                    any = true;
                }
            }
            if any {
                clipped_trials += 1;
            }
        }
        // 99%-confidence acceptance region for rate 0.01 over 1000 trials.
        assert!(
            clipped_trials <= 18,
            "clip rate too high: {clipped_trials}/1000"
        );
        let _ = cfg;
    }

    #[test]
    fn noiseless_roundtrip_through_full_pipeline() {
        // Full rate, huge budget, many levels: recovery up to quantization of
        // the rotated coordinates.
        let d = 4;
        let cfg = L2Config::new(d, 1, 20, 4, f64::INFINITY, 1.0, 0.01, 3, PrivacyMode::Ldp).unwrap();
        let alloc = cfg.allocation().unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let x = vec![0.5, -0.3, 0.1, 0.2];
        let (bundle, clips) = cfg.randomize(&x, &alloc, &mut rng).unwrap();
        assert_eq!(clips, 0);
        let est = cfg.analyze(&[bundle], &alloc).unwrap();
        for j in 0..d {
            assert!(
                (est[j] - x[j]).abs() < 1e-4,
                "coord {j}: {} vs {}",
                est[j],
                x[j]
            );
        }
    }

    #[test]
    fn unit_basis_vector_mean_recovered() {
        let d = 8;
        let n = 40;
        let cfg = L2Config::new(d, n, 3, 8, 16.0, 1.0, 0.01, 5, PrivacyMode::Ldp).unwrap();
        let alloc = cfg.allocation().unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let mut e1 = vec![0.0; d];
        e1[0] = 1.0;

        let trials = 2000;
        let mut mean = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for _ in 0..trials {
            let bundles: Vec<_> = (0..n)
                .map(|_| cfg.randomize(&e1, &alloc, &mut rng).unwrap().0)
                .collect();
            let est = cfg.analyze(&bundles, &alloc).unwrap();
            for j in 0..d {
                mean[j] += est[j] / trials as f64;
                sq[j] += est[j] * est[j] / trials as f64;
            }
        }
        for j in 0..d {
            let want = if j == 0 { 1.0 } else { 0.0 };
            let std = (sq[j] - mean[j] * mean[j]).max(0.0).sqrt();
            let ci = 4.0 * std / (trials as f64).sqrt() + 1e-9;
            assert!(
                (mean[j] - want).abs() < ci,
                "coord {j}: mean {} outside CI {ci}",
                mean[j]
            );
        }
    }

    #[test]
    fn rejects_norm_violation_and_dimension_mismatch() {
        let cfg = config(3, 1, 1, 1, 1.0);
        assert!(matches!(
            cfg.rotate(&[2.0, 0.0, 0.0]),
            Err(DmeError::InputOutsideDomain(_))
        ));
        assert!(cfg.rotate(&[0.0, 0.0]).is_err());
        assert!(cfg.unrotate(&[0.0, 0.0]).is_err());
    }
}
