//! Coordinate-sampled mean estimation of binary vectors.
//!
//! Each client splits its `{0,1}^d` vector into `s` blocks of
//! `a = ⌈d/s⌉` coordinates (zero-padding the tail block), samples one
//! coordinate per block uniformly, privatizes that bit with randomized
//! response, and ships `s` (coordinate, support-bit) messages. The analyzer
//! accumulates `a`-scaled reconstructed values per coordinate and divides by
//! the client count, which is unbiased for the true mean. Aggregation is by
//! exact counting, so the result is bit-identical under any permutation of
//! the messages within a block channel.

use rand::Rng;

use crate::error::{DmeError, Result};
use crate::rr::{self, FlipProb, PrivateBit};

/// A `{0,1}^d` input vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryVector {
    bits: Vec<u8>,
}

impl BinaryVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(DmeError::InvalidParameter(
                "binary vector entries must be 0 or 1".into(),
            ));
        }
        if bits.is_empty() {
            return Err(DmeError::InvalidParameter(
                "binary vector must have positive dimension".into(),
            ));
        }
        Ok(BinaryVector { bits })
    }

    pub fn zeros(d: usize) -> Self {
        BinaryVector { bits: vec![0; d] }
    }

    pub fn ones(d: usize) -> Self {
        BinaryVector { bits: vec![1; d] }
    }

    pub fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        BinaryVector {
            bits: (0..d).map(|_| rng.gen_range(0..=1u8)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, j: usize) -> u8 {
        self.bits[j]
    }
}

/// How a `d`-dimensional vector is split into `s` sampled blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingPlan {
    pub d: usize,
    pub s: usize,
    /// Block size `⌈d/s⌉`.
    pub a: usize,
    /// `s·a ≥ d`; coordinates in `d..padded_d` are dummy zeros.
    pub padded_d: usize,
}

impl SamplingPlan {
    /// Bits needed to address a coordinate within a block: `⌈log₂ a⌉`.
    pub fn coord_bits(&self) -> u32 {
        if self.a <= 1 {
            0
        } else {
            (self.a - 1).ilog2() + 1
        }
    }

    /// Exact payload size of one client's messages: `s·(⌈log₂ a⌉ + 1)`.
    pub fn payload_bits(&self) -> u64 {
        self.s as u64 * (self.coord_bits() as u64 + 1)
    }

    /// Block index a coordinate belongs to.
    pub fn block_of(&self, coord: u32) -> usize {
        coord as usize / self.a
    }
}

pub fn make_plan(d: usize, s: usize) -> Result<SamplingPlan> {
    if d == 0 || s == 0 || s > d {
        return Err(DmeError::InvalidParameter(format!(
            "need 1 <= s <= d, got d={d}, s={s}"
        )));
    }
    let a = d.div_ceil(s);
    Ok(SamplingPlan {
        d,
        s,
        a,
        padded_d: s * a,
    })
}

/// One (sampled coordinate, randomized bit) pair. The coordinate is an
/// absolute index into the padded vector; the value bit selects which of the
/// two public support points the randomizer emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Message {
    pub coord: u32,
    pub value_bit: bool,
}

/// The `s` messages one client emits, with the public parameters they were
/// produced under. Message `j` lies in block `j` until a shuffler strips the
/// bundling.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageBundle {
    pub messages: Vec<Message>,
    pub plan: SamplingPlan,
    pub p: FlipProb,
}

/// Mean estimate over `n` clients, dummy coordinates stripped.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanEstimate {
    pub values: Vec<f64>,
    pub n: usize,
}

/// Randomize one client's vector under a plan.
pub fn randomize<R: Rng + ?Sized>(
    b: &BinaryVector,
    plan: &SamplingPlan,
    p: FlipProb,
    rng: &mut R,
) -> Result<MessageBundle> {
    if b.dim() != plan.d {
        return Err(DmeError::InvalidParameter(format!(
            "vector dimension {} does not match plan dimension {}",
            b.dim(),
            plan.d
        )));
    }
    let mut messages = Vec::with_capacity(plan.s);
    for j in 0..plan.s {
        // A single-coordinate block needs no sampling draw.
        let offset = if plan.a == 1 {
            0
        } else {
            rng.gen_range(0..plan.a)
        };
        let coord = (j * plan.a + offset) as u32;
        let bit = if (coord as usize) < plan.d {
            b.get(coord as usize)
        } else {
            0 // dummy zero padding
        };
        let out: PrivateBit = rr::randomize_bit(bit, p, rng)?;
        messages.push(Message {
            coord,
            value_bit: out.support_high(),
        });
    }
    Ok(MessageBundle {
        messages,
        plan: *plan,
        p,
    })
}

/// Aggregate client bundles into the mean estimate.
pub fn analyze(bundles: &[MessageBundle]) -> Result<MeanEstimate> {
    let first = bundles
        .first()
        .ok_or_else(|| DmeError::InvalidParameter("no bundles to analyze".into()))?;
    let plan = first.plan;
    let p = first.p;
    for b in bundles {
        if b.plan != plan || b.p != p {
            return Err(DmeError::MalformedMessage(
                "bundles disagree on plan or flip probability".into(),
            ));
        }
        if b.messages.len() != plan.s {
            return Err(DmeError::MalformedMessage(format!(
                "bundle has {} messages, plan requires {}",
                b.messages.len(),
                plan.s
            )));
        }
        for (j, msg) in b.messages.iter().enumerate() {
            if plan.block_of(msg.coord) != j {
                return Err(DmeError::MalformedMessage(format!(
                    "message {} carries coordinate {} outside its block",
                    j, msg.coord
                )));
            }
        }
    }
    analyze_messages(
        bundles.iter().flat_map(|b| b.messages.iter().copied()),
        &plan,
        p,
        bundles.len(),
    )
}

/// Aggregate a bare message multiset (e.g. after shuffling) from `n`
/// clients. Summation is by per-coordinate counts, so the output is
/// bit-identical for any ordering of the input.
pub fn analyze_messages<I>(messages: I, plan: &SamplingPlan, p: FlipProb, n: usize) -> Result<MeanEstimate>
where
    I: IntoIterator<Item = Message>,
{
    if n == 0 {
        return Err(DmeError::InvalidParameter("no clients to analyze".into()));
    }
    let (lo, hi) = p.support()?;
    let mut count_hi = vec![0u64; plan.padded_d];
    let mut count_lo = vec![0u64; plan.padded_d];
    for msg in messages {
        let c = msg.coord as usize;
        if c >= plan.padded_d {
            return Err(DmeError::MalformedMessage(format!(
                "coordinate {} out of range (padded dimension {})",
                c, plan.padded_d
            )));
        }
        if msg.value_bit {
            count_hi[c] += 1;
        } else {
            count_lo[c] += 1;
        }
    }
    let a = plan.a as f64;
    let n_f = n as f64;
    let values = (0..plan.d)
        .map(|j| a * (count_hi[j] as f64 * hi + count_lo[j] as f64 * lo) / n_f)
        .collect();
    Ok(MeanEstimate { values, n })
}

/// Exact mean-squared error of the estimator for worst-case inputs
/// (all-ones vectors): `(d·a·p(1−p)/(1−2p)² + (a−1)·d)/n`, with
/// `a = ⌈d/s⌉`. When `s` divides `d` this is the familiar
/// `d(a−1)/n + d²·p(1−p)/(s·n·(1−2p)²)` form; with padding it accounts for
/// the noise messages that land on dummy coordinates and are dropped.
pub fn exact_mse(d: usize, n: usize, s: usize, p: FlipProb) -> Result<f64> {
    let plan = make_plan(d, s)?;
    if n == 0 {
        return Err(DmeError::InvalidParameter("need n >= 1".into()));
    }
    let noise = rr::mse(p)?;
    let a = plan.a as f64;
    let d_f = d as f64;
    Ok((d_f * a * noise + (a - 1.0) * d_f) / n as f64)
}

/// The LDP-mode error bound: exact constants with the per-message flip
/// probability solved from the budget split `ε0/s`.
pub fn ldp_mse_bound(d: usize, n: usize, s: usize, eps0: f64) -> Result<f64> {
    if eps0.is_nan() || eps0 <= 0.0 {
        return Err(DmeError::InvalidParameter(format!(
            "need a positive budget, got {eps0}"
        )));
    }
    let p = rr::flip_prob_for_budget(eps0 / s as f64)?;
    exact_mse(d, n, s, p)
}

/// Solve the shuffled-model parameters for a central `(ε, δ)` target:
/// `v² = nε²/(4s·log(1/δ))` and `p = ½(1 − √(v²/(v²+4)))`.
///
/// The returned pair satisfies the sufficiency condition
/// `2·√(s(1−2p)²·log(1/δ)/(n·p(1−p))) ≤ ε`.
pub fn mms_params(n: usize, s: usize, eps: f64, delta: f64) -> Result<(f64, FlipProb)> {
    if eps.is_nan() || eps <= 0.0 || eps > 1.0 {
        return Err(DmeError::InvalidParameter(format!(
            "central epsilon must lie in (0, 1], got {eps}"
        )));
    }
    if delta.is_nan() || delta <= 0.0 || delta >= 1.0 {
        return Err(DmeError::InvalidParameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if n == 0 || s == 0 {
        return Err(DmeError::InvalidParameter("need n >= 1 and s >= 1".into()));
    }
    let log_inv_delta = (1.0 / delta).ln();
    let v = (n as f64 * eps * eps / (4.0 * s as f64 * log_inv_delta)).sqrt();
    let p = rr::flip_prob_for_budget(v)?;
    if p.is_degenerate() {
        return Err(DmeError::BudgetTooSmall(format!(
            "solved v = {v} leaves the randomizer at a fair coin"
        )));
    }
    let pv = p.get();
    let achieved =
        2.0 * (s as f64 * (1.0 - 2.0 * pv).powi(2) * log_inv_delta / (n as f64 * pv * (1.0 - pv)))
            .sqrt();
    debug_assert!(achieved <= eps * (1.0 + 1e-9));
    Ok((v, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn fp(p: f64) -> FlipProb {
        FlipProb::new(p).unwrap()
    }

    #[test]
    fn plan_examples() {
        let plan = make_plan(8, 2).unwrap();
        assert_eq!((plan.a, plan.padded_d), (4, 8));
        let plan = make_plan(1, 1).unwrap();
        assert_eq!((plan.a, plan.padded_d), (1, 1));
        let plan = make_plan(10, 3).unwrap();
        assert_eq!((plan.a, plan.padded_d), (4, 12));
        assert!(make_plan(4, 5).is_err());
        assert!(make_plan(4, 0).is_err());
    }

    #[test]
    fn payload_bits_formula() {
        assert_eq!(make_plan(8, 2).unwrap().payload_bits(), 6); // 2·(2+1)
        assert_eq!(make_plan(10, 3).unwrap().payload_bits(), 9); // 3·(2+1)
        assert_eq!(make_plan(8, 8).unwrap().payload_bits(), 8); // 8·(0+1)
        assert_eq!(make_plan(7, 3).unwrap().payload_bits(), 9); // a=3 → 2 bits
    }

    #[test]
    fn noiseless_full_rate_roundtrip() {
        let plan = make_plan(2, 2).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for bits in [[0u8, 0], [0, 1], [1, 0], [1, 1]] {
            let b = BinaryVector::new(bits.to_vec()).unwrap();
            let bundle = randomize(&b, &plan, fp(0.0), &mut rng).unwrap();
            let est = analyze(&[bundle]).unwrap();
            assert_eq!(est.values, bits.iter().map(|&x| x as f64).collect::<Vec<_>>());
        }
    }

    #[test]
    fn single_block_sampling_is_scaled_basis_vector() {
        let plan = make_plan(4, 1).unwrap();
        let b = BinaryVector::new(vec![1, 0, 0, 0]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let trials = 100_000;
        let mut mean = [0.0f64; 4];
        for _ in 0..trials {
            let bundle = randomize(&b, &plan, fp(0.0), &mut rng).unwrap();
            let est = analyze(std::slice::from_ref(&bundle)).unwrap();
            // Each trial is a·e_coord·b[coord]: one entry 4 or 0, rest 0.
            let nonzero: Vec<f64> = est.values.iter().copied().filter(|&x| x != 0.0).collect();
            assert!(nonzero.is_empty() || nonzero == vec![4.0]);
            for (m, v) in mean.iter_mut().zip(est.values.iter()) {
                *m += v / trials as f64;
            }
        }
        // Per-coordinate variance is at most 16·(1/4)(3/4) = 3.
        let tol = 4.0 * (3.0 / trials as f64).sqrt();
        assert!((mean[0] - 1.0).abs() < tol);
        for &m in &mean[1..] {
            assert!(m.abs() < tol);
        }
    }

    #[test]
    fn empirical_mse_matches_exact_constant() {
        let d = 4;
        let s = 2;
        let n = 100;
        let plan = make_plan(d, s).unwrap();
        assert!((exact_mse(d, n, s, fp(0.25)).unwrap() - 0.1).abs() < 1e-15); // (4·2·0.75 + 1·4)/100

        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let trials = 20_000;
        let b = BinaryVector::ones(d);
        for &pv in &[0.1, 0.25, 0.4] {
            let p = fp(pv);
            let expected = exact_mse(d, n, s, p).unwrap();
            let mut acc = 0.0;
            for _ in 0..trials {
                let bundles: Vec<_> = (0..n)
                    .map(|_| randomize(&b, &plan, p, &mut rng).unwrap())
                    .collect();
                let est = analyze(&bundles).unwrap();
                acc += est
                    .values
                    .iter()
                    .map(|&x| (x - 1.0) * (x - 1.0))
                    .sum::<f64>();
            }
            let emp = acc / trials as f64;
            assert!(
                (emp - expected).abs() < 0.05 * expected,
                "p={pv}: empirical {emp} vs exact {expected}"
            );
        }
    }

    #[test]
    fn analyzer_is_permutation_invariant_bitwise() {
        let plan = make_plan(10, 3).unwrap();
        let p = fp(0.3);
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let bundles: Vec<_> = (0..50)
            .map(|_| {
                let b = BinaryVector::random(10, &mut rng);
                randomize(&b, &plan, p, &mut rng).unwrap()
            })
            .collect();
        let direct = analyze(&bundles).unwrap();

        // Pool all messages, reverse and interleave them arbitrarily.
        let mut pooled: Vec<Message> = bundles
            .iter()
            .flat_map(|b| b.messages.iter().copied())
            .collect();
        pooled.reverse();
        pooled.swap(0, 17);
        pooled.swap(3, 40);
        let shuffled = analyze_messages(pooled, &plan, p, bundles.len()).unwrap();
        assert_eq!(direct.values, shuffled.values); // exact, not approximate
    }

    #[test]
    fn full_rate_matches_per_coordinate_randomized_response() {
        // With s = d each coordinate is independently privatized; the
        // mechanism must consume randomness exactly like the direct loop.
        let d = 8;
        let plan = make_plan(d, d).unwrap();
        let p = fp(0.3);
        let mut rng_mech = ChaCha12Rng::seed_from_u64(21);
        let mut rng_direct = rng_mech.clone();

        let b = BinaryVector::random(d, &mut rng_mech);
        let _ = BinaryVector::random(d, &mut rng_direct); // keep streams aligned
        let bundle = randomize(&b, &plan, p, &mut rng_mech).unwrap();
        let est = analyze(std::slice::from_ref(&bundle)).unwrap();

        let direct: Vec<f64> = (0..d)
            .map(|j| {
                rr::randomize_bit(b.get(j), p, &mut rng_direct)
                    .unwrap()
                    .value()
            })
            .collect();
        assert_eq!(est.values, direct);
    }

    #[test]
    fn dummy_coordinates_are_dropped() {
        let plan = make_plan(10, 3).unwrap();
        let p = fp(0.1);
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let b = BinaryVector::ones(10);
        let bundle = randomize(&b, &plan, p, &mut rng).unwrap();
        let est = analyze(&[bundle]).unwrap();
        assert_eq!(est.values.len(), 10);
    }

    #[test]
    fn malformed_inputs() {
        assert!(analyze(&[]).is_err());

        let plan = make_plan(4, 2).unwrap();
        let p = fp(0.2);
        let msgs = vec![Message {
            coord: 99,
            value_bit: true,
        }];
        assert!(matches!(
            analyze_messages(msgs, &plan, p, 1),
            Err(DmeError::MalformedMessage(_))
        ));

        // A bundle whose second message sits in the wrong block.
        let bundle = MessageBundle {
            messages: vec![
                Message { coord: 0, value_bit: true },
                Message { coord: 1, value_bit: true },
            ],
            plan,
            p,
        };
        assert!(matches!(analyze(&[bundle]), Err(DmeError::MalformedMessage(_))));
    }

    #[test]
    fn ldp_bound_structure() {
        // No sampling, no noise.
        let b = ldp_mse_bound(8, 100, 8, f64::INFINITY);
        assert!(b.is_err() || b.unwrap() == 0.0);
        let p0 = rr::flip_prob_for_budget(f64::INFINITY).unwrap();
        assert_eq!(exact_mse(8, 100, 8, p0).unwrap(), 0.0);

        // Doubling n halves the bound exactly.
        let b1 = ldp_mse_bound(4, 100, 2, 2.0).unwrap();
        let b2 = ldp_mse_bound(4, 200, 2, 2.0).unwrap();
        assert_eq!(b1, 2.0 * b2);

        // Exact value at d=4, n=100, s=2, eps0=2: p = fpb(1).
        let p = rr::flip_prob_for_budget(1.0).unwrap();
        let want = (4.0 * 2.0 * rr::mse(p).unwrap() + 4.0) / 100.0;
        assert!((b1 - want).abs() < 1e-15);
    }

    #[test]
    fn mms_parameter_solution() {
        let (v, p) = mms_params(1000, 1, 1.0, 1e-5).unwrap();
        let log_inv_delta = (1e5f64).ln();
        assert!((v * v - 1000.0 / (4.0 * log_inv_delta)).abs() < 1e-9);
        assert!((v * v - 21.714724095162588).abs() < 1e-9);

        // Sufficiency condition holds.
        let pv = p.get();
        let achieved = 2.0
            * ((1.0 - 2.0 * pv).powi(2) * log_inv_delta / (1000.0 * pv * (1.0 - pv))).sqrt();
        assert!(achieved <= 1.0 + 1e-9);

        // Local parameter is finite and weaker than the central guarantee.
        let eps0 = rr::ldp_epsilon(p);
        assert!(eps0.is_finite() && eps0 > 1.0);

        // v scales exactly as sqrt(n).
        let (v4, _) = mms_params(4000, 1, 1.0, 1e-5).unwrap();
        assert_eq!(v4, 2.0 * v);

        assert!(mms_params(1000, 1, 0.0, 1e-5).is_err());
        assert!(mms_params(1000, 1, 0.5, 1.5).is_err());
    }
}
