//! Toy differentially private SGD on synthetic objectives.
//!
//! Each round samples a cohort of clients, clips their gradients to the ℓ2
//! ball, aggregates them through the shuffled ℓ2 mean-estimation pipeline,
//! and takes a gradient step. The per-round mechanism budget comes from the
//! target central `(ε, δ)`: the round budget is
//! `ε̃ = nε/(k·√(T·log(2/δ)))`, amplified by cohort subsampling to
//! `ε_t = log(1 + q(e^{ε̃} − 1))` with `q = k/n`, and the reported total is
//! the strong-composition value
//! `ε ≤ √(2T·log(2/δ))·ε_t + T·ε_t·(e^{ε_t} − 1)`.

use rand::Rng;

use dme_core::l2::L2Config;
use dme_core::linf::PrivacyMode;
use dme_core::seeding;
use dme_core::{DmeError, Result};

use crate::config::Config;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// `F(θ) = (1/2N)·Σ‖θ − c_i‖²` with fixed per-client targets.
    Quadratic,
    /// Binary logistic loss on one labelled unit vector per client.
    Logistic,
}

impl std::str::FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "quadratic" => Ok(Objective::Quadratic),
            "logistic" => Ok(Objective::Logistic),
            other => Err(format!("unknown objective `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SgdSpec {
    /// Rounds `T`.
    pub rounds: usize,
    /// Clients sampled per round `k`.
    pub cohort: usize,
    /// Step size `η`.
    pub step: f64,
    pub objective: Objective,
    /// Target central privacy of the whole run.
    pub eps: f64,
    pub delta: f64,
    pub n_clients: usize,
    pub dim: usize,
    /// Gradient clipping radius (the DME ball).
    pub grad_clip: f64,
    /// Levels and per-level messages of the inner mechanism.
    pub m: usize,
    pub s: usize,
    pub beta: f64,
    pub seed: u64,
}

impl SgdSpec {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let objective: Objective = cfg
            .get("objective")
            .unwrap_or("quadratic")
            .parse()
            .map_err(DmeError::InvalidParameter)?;
        let spec = SgdSpec {
            rounds: cfg.get_or("rounds", 10)?,
            cohort: cfg.get_or("cohort", 10)?,
            step: cfg.get_or("step", 0.1)?,
            objective,
            eps: cfg.get_or("eps", 1.0)?,
            delta: cfg.get_or("delta", 1e-5)?,
            n_clients: cfg.get_or("n", 100)?,
            dim: cfg.get_or("dim", 8)?,
            grad_clip: cfg.get_or("grad_clip", 1.0)?,
            m: cfg.get_or("m", 4)?,
            s: cfg.get_or("s", 8)?,
            beta: cfg.get_or("beta", 0.01)?,
            seed: cfg.get_or("seed", 0)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(DmeError::InvalidParameter("need rounds >= 1".into()));
        }
        if self.cohort == 0 || self.cohort > self.n_clients {
            return Err(DmeError::InvalidParameter(format!(
                "need 1 <= cohort <= n, got cohort={} n={}",
                self.cohort, self.n_clients
            )));
        }
        let eps_bad = self.eps.is_nan() || self.eps <= 0.0;
        let delta_bad = self.delta.is_nan() || self.delta <= 0.0 || self.delta >= 1.0;
        if eps_bad || delta_bad {
            return Err(DmeError::InvalidParameter(
                "need eps > 0 and delta in (0,1)".into(),
            ));
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return Err(DmeError::InvalidParameter("need grad_clip > 0".into()));
        }
        Ok(())
    }
}

/// The full composition arithmetic for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyReport {
    /// Per-round mechanism budget `ε̃ = nε/(k·√(T·log(2/δ)))`.
    pub eps_tilde: f64,
    /// Mechanism parameter `v² = k·ε̃²/(s·log(kT/(nδ)))`.
    pub v_round: f64,
    /// Subsampling ratio `q = k/n`.
    pub sampling_q: f64,
    /// Subsampled per-round loss `ε_t = log(1 + q(e^{ε̃} − 1))`.
    pub eps_round: f64,
    /// Strong-composition total `√(2T·log(2/δ))·ε_t + T·ε_t·(e^{ε_t} − 1)`.
    pub eps_total: f64,
}

/// Pure arithmetic: the privacy parameters implied by a spec.
pub fn composition_report(spec: &SgdSpec) -> Result<PrivacyReport> {
    spec.validate()?;
    let n = spec.n_clients as f64;
    let k = spec.cohort as f64;
    let t = spec.rounds as f64;
    let q = k / n;
    let log2d = (2.0 / spec.delta).ln();
    let eps_tilde = n * spec.eps / (k * (t * log2d).sqrt());
    let round_delta_log = (k * t / (n * spec.delta)).ln();
    if round_delta_log <= 0.0 {
        return Err(DmeError::InvalidParameter(
            "degenerate per-round delta; decrease delta or increase rounds".into(),
        ));
    }
    let v_round = (k * eps_tilde * eps_tilde / (spec.s as f64 * round_delta_log)).sqrt();
    let eps_round = (1.0 + q * (eps_tilde.exp() - 1.0)).ln();
    let eps_total = (2.0 * t * log2d).sqrt() * eps_round + t * eps_round * (eps_round.exp() - 1.0);
    Ok(PrivacyReport {
        eps_tilde,
        v_round,
        sampling_q: q,
        eps_round,
        eps_total,
    })
}

#[derive(Debug, Clone)]
pub struct SgdRun {
    /// Objective value before training and after each round (`rounds + 1`
    /// entries).
    pub losses: Vec<f64>,
    pub report: PrivacyReport,
    /// Total clipped rotated coordinates across all rounds and clients.
    pub clip_events: usize,
}

// Substream domains under the run seed.
const DOMAIN_DATA: u64 = 10;
const DOMAIN_COHORT: u64 = 20;
const DOMAIN_DME: u64 = 21;
const ROTATION_DOMAIN: u64 = 22;

/// Synthetic per-client data.
enum Dataset {
    Quadratic { targets: Vec<Vec<f64>> },
    Logistic { features: Vec<Vec<f64>>, labels: Vec<f64> },
}

impl Dataset {
    fn generate(spec: &SgdSpec) -> Dataset {
        let mut rng = seeding::substream(spec.seed, &[DOMAIN_DATA]);
        match spec.objective {
            Objective::Quadratic => {
                // Targets cluster away from the zero initialization so the
                // optimizer has a real gap to close.
                let center = 0.5 / (spec.dim as f64).sqrt();
                let targets = (0..spec.n_clients)
                    .map(|_| {
                        let mut c = unit_scaled(spec.dim, 0.3, &mut rng);
                        for cj in &mut c {
                            *cj += center;
                        }
                        c
                    })
                    .collect();
                Dataset::Quadratic { targets }
            }
            Objective::Logistic => {
                let features: Vec<Vec<f64>> = (0..spec.n_clients)
                    .map(|_| unit_scaled(spec.dim, 1.0, &mut rng))
                    .collect();
                // Separator: the first axis.
                let labels = features
                    .iter()
                    .map(|x| if x[0] >= 0.0 { 1.0 } else { -1.0 })
                    .collect();
                Dataset::Logistic { features, labels }
            }
        }
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        match self {
            Dataset::Quadratic { targets } => {
                targets
                    .iter()
                    .map(|c| {
                        theta
                            .iter()
                            .zip(c.iter())
                            .map(|(t, ci)| (t - ci) * (t - ci))
                            .sum::<f64>()
                    })
                    .sum::<f64>()
                    / (2.0 * targets.len() as f64)
            }
            Dataset::Logistic { features, labels } => {
                features
                    .iter()
                    .zip(labels.iter())
                    .map(|(x, y)| {
                        let margin: f64 =
                            y * theta.iter().zip(x.iter()).map(|(t, xi)| t * xi).sum::<f64>();
                        (-margin).exp().ln_1p()
                    })
                    .sum::<f64>()
                    / features.len() as f64
            }
        }
    }

    fn gradient(&self, client: usize, theta: &[f64]) -> Vec<f64> {
        match self {
            Dataset::Quadratic { targets } => theta
                .iter()
                .zip(targets[client].iter())
                .map(|(t, c)| t - c)
                .collect(),
            Dataset::Logistic { features, labels } => {
                let x = &features[client];
                let y = labels[client];
                let margin: f64 = y * theta.iter().zip(x.iter()).map(|(t, xi)| t * xi).sum::<f64>();
                let sigma = 1.0 / (1.0 + margin.exp());
                x.iter().map(|xi| -y * xi * sigma).collect()
            }
        }
    }
}

fn unit_scaled<R: Rng + ?Sized>(d: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    let mut x: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let r = radius * rng.gen_range(0.0f64..1.0).powf(1.0 / d as f64);
    for v in &mut x {
        *v *= r / norm;
    }
    x
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn clip_to_ball(g: &mut [f64], radius: f64) {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > radius {
        let scale = radius / norm;
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
}

fn sample_cohort<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Run the private training loop. The mechanism configuration is validated
/// before the first round; an infeasible budget fails here, not mid-run.
pub fn run(spec: &SgdSpec) -> Result<SgdRun> {
    let report = composition_report(spec)?;
    let cfg = L2Config::new(
        spec.dim,
        spec.cohort,
        spec.m,
        spec.s,
        report.v_round,
        spec.grad_clip,
        spec.beta,
        seeding::derive_seed(spec.seed, &[ROTATION_DOMAIN]),
        PrivacyMode::Mms,
    )?;
    let alloc = cfg.allocation()?;
    if alloc.p_k.iter().any(|p| p.is_degenerate()) {
        return Err(DmeError::BudgetTooSmall(
            "per-level flip probability degenerates to a fair coin; \
             increase eps, rounds budget, or levels"
                .into(),
        ));
    }

    let data = Dataset::generate(spec);
    let mut theta = vec![0.0f64; spec.dim];
    let mut losses = Vec::with_capacity(spec.rounds + 1);
    losses.push(data.loss(&theta));
    let mut clip_events = 0usize;

    for round in 0..spec.rounds {
        let mut cohort_rng = seeding::substream(spec.seed, &[DOMAIN_COHORT, round as u64]);
        let cohort = sample_cohort(spec.n_clients, spec.cohort, &mut cohort_rng);

        let mut bundles = Vec::with_capacity(cohort.len());
        for (slot, &client) in cohort.iter().enumerate() {
            let mut g = data.gradient(client, &theta);
            clip_to_ball(&mut g, spec.grad_clip);
            let mut rng =
                seeding::substream(spec.seed, &[DOMAIN_DME, round as u64, slot as u64]);
            let (bundle, clips) = cfg.randomize(&g, &alloc, &mut rng)?;
            clip_events += clips;
            bundles.push(bundle);
        }
        let g_hat = cfg.analyze(&bundles, &alloc)?;
        for (t, g) in theta.iter_mut().zip(g_hat.iter()) {
            *t -= spec.step * g;
        }
        losses.push(data.loss(&theta));
    }

    Ok(SgdRun {
        losses,
        report,
        clip_events,
    })
}

/// The same loop without privatization: exact cohort-mean gradients.
/// Shares the cohort sampling streams with [`run`] so traces are comparable.
pub fn run_plain(spec: &SgdSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let data = Dataset::generate(spec);
    let mut theta = vec![0.0f64; spec.dim];
    let mut losses = Vec::with_capacity(spec.rounds + 1);
    losses.push(data.loss(&theta));
    for round in 0..spec.rounds {
        let mut cohort_rng = seeding::substream(spec.seed, &[DOMAIN_COHORT, round as u64]);
        let cohort = sample_cohort(spec.n_clients, spec.cohort, &mut cohort_rng);
        let mut mean = vec![0.0f64; spec.dim];
        for &client in &cohort {
            let mut g = data.gradient(client, &theta);
            clip_to_ball(&mut g, spec.grad_clip);
            for (mj, gj) in mean.iter_mut().zip(g.iter()) {
                *mj += gj / cohort.len() as f64;
            }
        }
        for (t, g) in theta.iter_mut().zip(mean.iter()) {
            *t -= spec.step * g;
        }
        losses.push(data.loss(&theta));
    }
    Ok(losses)
}
