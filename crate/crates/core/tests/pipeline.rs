//! End-to-end behavior across modules: unbiasedness over parameter grids,
//! wire round trips through the pipeline, and shuffled-vs-direct equality.

use dme_core::binary::{self, BinaryVector};
use dme_core::l2::L2Config;
use dme_core::linf::{self, LinfConfig, PrivacyMode};
use dme_core::rr::FlipProb;
use dme_core::seeding;
use dme_core::shuffle::{run_pipeline, ClientInputs, Mechanism, TransportMode};
use dme_core::wire;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

fn mean_of(inputs: &[Vec<f64>]) -> Vec<f64> {
    let d = inputs[0].len();
    let mut mean = vec![0.0; d];
    for x in inputs {
        for j in 0..d {
            mean[j] += x[j] / inputs.len() as f64;
        }
    }
    mean
}

#[test]
fn binary_unbiased_over_plan_grid() {
    let n = 30;
    let trials = 20_000;
    for &(d, s) in &[(4usize, 1usize), (4, 2), (4, 4), (10, 3)] {
        let plan = binary::make_plan(d, s).unwrap();
        let p = FlipProb::new(0.25).unwrap();
        let mut rng: ChaCha12Rng = seeding::substream(1, &[d as u64, s as u64]);
        let inputs: Vec<BinaryVector> = (0..n).map(|_| BinaryVector::random(d, &mut rng)).collect();
        let truth: Vec<f64> = (0..d)
            .map(|j| inputs.iter().map(|b| b.get(j) as f64).sum::<f64>() / n as f64)
            .collect();

        let per_client = binary::exact_mse(d, n, s, p).unwrap() * n as f64;
        let mut mean = vec![0.0; d];
        for _ in 0..trials {
            let bundles: Vec<_> = inputs
                .iter()
                .map(|b| binary::randomize(b, &plan, p, &mut rng).unwrap())
                .collect();
            let est = binary::analyze(&bundles).unwrap();
            for (m, v) in mean.iter_mut().zip(est.values.iter()) {
                *m += v / trials as f64;
            }
        }
        // Per-coordinate variance is at most the total per-client variance / n.
        let sigma = (per_client / n as f64 / trials as f64).sqrt();
        for j in 0..d {
            assert!(
                (mean[j] - truth[j]).abs() <= 4.0 * sigma,
                "(d={d}, s={s}) coord {j}: {} vs {}",
                mean[j],
                truth[j]
            );
        }
    }
}

#[test]
fn linf_unbiased_over_config_grid() {
    let n = 20;
    let trials = 20_000;
    for &(d, s, m) in &[(2usize, 1usize, 2usize), (4, 2, 3), (4, 4, 1)] {
        let cfg = LinfConfig::new(d, n, m, s, 6.0, 1.0, PrivacyMode::Ldp).unwrap();
        let alloc = cfg.allocation().unwrap();
        let mut rng: ChaCha12Rng = seeding::substream(2, &[d as u64, s as u64, m as u64]);
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect())
            .collect();
        let truth = mean_of(&inputs);

        let mut mean = vec![0.0; d];
        let mut var_acc = vec![0.0; d];
        let mut ests = Vec::with_capacity(trials);
        for _ in 0..trials {
            let bundles: Vec<_> = inputs
                .iter()
                .map(|x| linf::randomize(x, &cfg, &alloc, &mut rng).unwrap())
                .collect();
            let est = linf::analyze(&bundles, &cfg, &alloc).unwrap();
            for j in 0..d {
                mean[j] += est[j] / trials as f64;
            }
            ests.push(est);
        }
        for est in &ests {
            for j in 0..d {
                var_acc[j] += (est[j] - mean[j]) * (est[j] - mean[j]) / trials as f64;
            }
        }
        for j in 0..d {
            let sigma = (var_acc[j] / trials as f64).sqrt();
            assert!(
                (mean[j] - truth[j]).abs() <= 4.0 * sigma + 1e-12,
                "(d={d}, s={s}, m={m}) coord {j}: {} vs {} (sigma {sigma})",
                mean[j],
                truth[j]
            );
        }
    }
}

#[test]
fn wire_roundtrip_preserves_analysis() {
    let cfg = LinfConfig::new(10, 8, 3, 3, 4.0, 2.0, PrivacyMode::Mms).unwrap();
    let alloc = cfg.allocation().unwrap();
    let mut rng: ChaCha12Rng = seeding::substream(3, &[0]);
    let inputs: Vec<Vec<f64>> = (0..8)
        .map(|_| (0..10).map(|_| rng.gen_range(-2.0..=2.0)).collect())
        .collect();
    let bundles: Vec<_> = inputs
        .iter()
        .map(|x| linf::randomize(x, &cfg, &alloc, &mut rng).unwrap())
        .collect();
    let direct = linf::analyze(&bundles, &cfg, &alloc).unwrap();

    // Serialize every client, concatenate, decode, analyze again.
    let mut blob = Vec::new();
    for b in &bundles {
        blob.extend_from_slice(&wire::encode_linf_bundle(b).unwrap().0);
    }
    let mut decoded = Vec::new();
    let mut cursor = 0;
    while cursor < blob.len() {
        let (bundle, used) = wire::decode_linf_bundle(&blob[cursor..], &cfg, &alloc).unwrap();
        decoded.push(bundle);
        cursor += used;
    }
    let roundtrip = linf::analyze(&decoded, &cfg, &alloc).unwrap();
    assert_eq!(direct, roundtrip);
}

#[test]
fn shuffled_pipeline_equals_direct_for_all_mechanisms() {
    let seed = 11;

    let plan = binary::make_plan(6, 2).unwrap();
    let p = FlipProb::new(0.2).unwrap();
    let mut rng: ChaCha12Rng = seeding::substream(4, &[0]);
    let bits: Vec<BinaryVector> = (0..9).map(|_| BinaryVector::random(6, &mut rng)).collect();
    let mech = Mechanism::Binary { plan, p };
    let a = run_pipeline(&ClientInputs::Bits(bits.clone()), &mech, TransportMode::Shuffled, seed).unwrap();
    let b = run_pipeline(&ClientInputs::Bits(bits), &mech, TransportMode::Direct, seed).unwrap();
    assert_eq!(a.estimate, b.estimate);

    let cfg = L2Config::new(5, 6, 2, 4, 8.0, 1.0, 0.05, 17, PrivacyMode::Mms).unwrap();
    let alloc = cfg.allocation().unwrap();
    let inputs: Vec<Vec<f64>> = (0..6)
        .map(|_| {
            let mut x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1.0 {
                for v in &mut x {
                    *v /= norm;
                }
            }
            x
        })
        .collect();
    let mech = Mechanism::L2 { cfg, alloc };
    let a = run_pipeline(&ClientInputs::Reals(inputs.clone()), &mech, TransportMode::Shuffled, seed).unwrap();
    let b = run_pipeline(&ClientInputs::Reals(inputs), &mech, TransportMode::Direct, seed).unwrap();
    assert_eq!(a.estimate, b.estimate);
    assert_eq!(a.transcript.bits_per_client, b.transcript.bits_per_client);
}

#[test]
fn l2_conditionally_unbiased_without_clipping() {
    let d = 8;
    let n = 10;
    let cfg = L2Config::new(d, n, 3, 8, 32.0, 1.0, 0.01, 23, PrivacyMode::Ldp).unwrap();
    let alloc = cfg.allocation().unwrap();
    let mut rng: ChaCha12Rng = seeding::substream(5, &[0]);
    let inputs: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in &mut x {
                *v *= 0.9 / norm.max(1e-12);
            }
            x
        })
        .collect();
    let truth = mean_of(&inputs);

    let trials = 10_000;
    let mut mean = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for _ in 0..trials {
        let mut bundles = Vec::with_capacity(n);
        for x in &inputs {
            let (bundle, clips) = cfg.randomize(x, &alloc, &mut rng).unwrap();
            assert_eq!(clips, 0, "unexpected clip event");
            bundles.push(bundle);
        }
        let est = cfg.analyze(&bundles, &alloc).unwrap();
        for j in 0..d {
            mean[j] += est[j] / trials as f64;
            sq[j] += est[j] * est[j] / trials as f64;
        }
    }
    for j in 0..d {
        let sigma = ((sq[j] - mean[j] * mean[j]).max(0.0) / trials as f64).sqrt();
        assert!(
            (mean[j] - truth[j]).abs() <= 4.0 * sigma + 1e-9,
            "coord {j}: {} vs {}",
            mean[j],
            truth[j]
        );
    }
}
