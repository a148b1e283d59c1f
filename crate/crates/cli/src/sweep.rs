//! Configuration-driven Monte-Carlo sweeps.
//!
//! A sweep takes the Cartesian product of its parameter grids, runs `trials`
//! independent pipeline executions per grid point against a fixed input set,
//! and emits one CSV row per point pairing the empirical error with the
//! matching closed-form bound (and, for shuffled rows, the certified central
//! privacy). Trials derive their randomness from
//! `(seed, trial-index, client-index)` substreams and reduce in trial order,
//! so the CSV is byte-identical for any worker count.

use rayon::prelude::*;

use dme_core::accounting::{self, CertifyTarget};
use dme_core::binary::{self, BinaryVector};
use dme_core::l2::L2Config;
use dme_core::linf::{self, LinfConfig, PrivacyMode};
use dme_core::seeding;
use dme_core::shuffle::{run_pipeline, ClientInputs, Mechanism, TransportMode};
use dme_core::{DmeError, Result};
use rand::Rng;

use crate::config::Config;
use crate::laplace;

pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: &str = "schema_version,mechanism,mode,n,d,s,m,eps_target,delta,v,\
     trials,seed,empirical_mse,empirical_bias_norm,theory_bound,certified_eps,\
     bits_per_client,clip_rate,ci_halfwidth,error";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MechanismKind {
    Binary,
    Linf,
    L2,
    Laplace,
}

impl MechanismKind {
    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::Binary => "binary",
            MechanismKind::Linf => "linf",
            MechanismKind::L2 => "l2",
            MechanismKind::Laplace => "laplace",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Ldp,
    Mms,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Ldp => "ldp",
            Mode::Mms => "mms",
        }
    }
}

/// How the fixed per-grid-point input set is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputKind {
    /// Uniform over the mechanism's input domain.
    Uniform,
    /// The worst-case corner: all-ones bits, `r∞·1_d`, or `r2/√d·1_d`.
    Ones,
    Zero,
    /// Every client holds `c·1_d` (for binary, `c` must be 0 or 1).
    Const(f64),
}

impl std::str::FromStr for InputKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(InputKind::Uniform),
            "ones" => Ok(InputKind::Ones),
            "zero" => Ok(InputKind::Zero),
            other => match other.strip_prefix("const:") {
                Some(v) => v
                    .parse::<f64>()
                    .map(InputKind::Const)
                    .map_err(|e| format!("bad const input value: {e}")),
                None => Err(format!("unknown input kind `{other}`")),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub mechanism: MechanismKind,
    pub mode: Mode,
    pub n: Vec<usize>,
    pub d: Vec<usize>,
    pub s: Vec<usize>,
    pub m: Vec<usize>,
    /// Central ε grid in MMS mode; ε0 grid in LDP mode.
    pub eps: Vec<f64>,
    pub delta: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub r_inf: f64,
    pub r2: f64,
    pub beta: f64,
    pub rotation_seed: u64,
    pub input: InputKind,
}

impl SweepSpec {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let mechanism = match cfg.require("mechanism")? {
            "binary" => MechanismKind::Binary,
            "linf" => MechanismKind::Linf,
            "l2" => MechanismKind::L2,
            "laplace" => MechanismKind::Laplace,
            other => {
                return Err(DmeError::InvalidParameter(format!(
                    "unknown mechanism `{other}`"
                )))
            }
        };
        let mode = match cfg.get("mode").unwrap_or("ldp") {
            "ldp" => Mode::Ldp,
            "mms" => Mode::Mms,
            other => {
                return Err(DmeError::InvalidParameter(format!("unknown mode `{other}`")))
            }
        };
        let input: InputKind = cfg
            .get("input")
            .unwrap_or("uniform")
            .parse()
            .map_err(DmeError::InvalidParameter)?;
        let spec = SweepSpec {
            mechanism,
            mode,
            n: cfg.get_list_or("n", vec![1])?,
            d: cfg.get_list_or("d", vec![1])?,
            s: cfg.get_list_or("s", vec![1])?,
            m: cfg.get_list_or("m", vec![1])?,
            eps: cfg.get_list_or("eps", vec![1.0])?,
            delta: cfg.get_list_or("delta", vec![1e-5])?,
            trials: cfg.get_or("trials", 1000)?,
            seed: cfg.get_or("seed", 0)?,
            r_inf: cfg.get_or("r_inf", 1.0)?,
            r2: cfg.get_or("r2", 1.0)?,
            beta: cfg.get_or("beta", 0.01)?,
            rotation_seed: cfg.get_or("rotation_seed", 0)?,
            input,
        };
        if spec.trials == 0 {
            return Err(DmeError::InvalidParameter("need trials >= 1".into()));
        }
        Ok(spec)
    }
}

/// One grid point's results. Empirical fields are absent on error rows.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub mechanism: &'static str,
    pub mode: &'static str,
    pub n: usize,
    pub d: usize,
    pub s: usize,
    pub m: usize,
    pub eps_target: f64,
    pub delta: Option<f64>,
    pub v: Option<f64>,
    pub trials: usize,
    pub seed: u64,
    pub empirical_mse: Option<f64>,
    pub empirical_bias_norm: Option<f64>,
    pub theory_bound: Option<f64>,
    pub certified_eps: Option<f64>,
    pub bits_per_client: Option<u64>,
    pub clip_rate: Option<f64>,
    pub ci_halfwidth: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        fn opt<T: std::fmt::Display>(x: &Option<T>) -> String {
            x.as_ref().map_or(String::new(), |v| v.to_string())
        }
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            CSV_SCHEMA_VERSION,
            self.mechanism,
            self.mode,
            self.n,
            self.d,
            self.s,
            self.m,
            self.eps_target,
            opt(&self.delta),
            opt(&self.v),
            self.trials,
            self.seed,
            opt(&self.empirical_mse),
            opt(&self.empirical_bias_norm),
            opt(&self.theory_bound),
            opt(&self.certified_eps),
            opt(&self.bits_per_client),
            opt(&self.clip_rate),
            opt(&self.ci_halfwidth),
            self.error
                .as_deref()
                .map_or(String::new(), |e| e.replace(',', ";")),
        )
    }
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    out
}

/// Run the full grid. Invalid grid points produce error rows; the sweep
/// continues.
pub fn run_sweep(spec: &SweepSpec) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    let mut row_idx = 0u64;
    for &n in &spec.n {
        for &d in &spec.d {
            for &s in &spec.s {
                for &m in &spec.m {
                    for &eps in &spec.eps {
                        for &delta in &spec.delta {
                            let point = GridPoint {
                                n,
                                d,
                                s,
                                m,
                                eps,
                                delta,
                                row_idx,
                            };
                            rows.push(run_point(spec, &point));
                            row_idx += 1;
                        }
                    }
                }
            }
        }
    }
    rows
}

/// Run the sweep on a dedicated thread pool. Results are identical to
/// [`run_sweep`] for every worker count.
pub fn run_sweep_with_threads(spec: &SweepSpec, threads: usize) -> Result<Vec<SweepRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| DmeError::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(|| run_sweep(spec)))
}

struct GridPoint {
    n: usize,
    d: usize,
    s: usize,
    m: usize,
    eps: f64,
    delta: f64,
    row_idx: u64,
}

// Substream domains under the sweep seed.
const DOMAIN_INPUTS: u64 = 2;
const DOMAIN_TRIAL: u64 = 3;

fn run_point(spec: &SweepSpec, pt: &GridPoint) -> SweepRow {
    let mut row = SweepRow {
        mechanism: spec.mechanism.name(),
        mode: spec.mode.name(),
        n: pt.n,
        d: pt.d,
        s: pt.s,
        m: pt.m,
        eps_target: pt.eps,
        delta: (spec.mode == Mode::Mms).then_some(pt.delta),
        v: None,
        trials: spec.trials,
        seed: spec.seed,
        empirical_mse: None,
        empirical_bias_norm: None,
        theory_bound: None,
        certified_eps: None,
        bits_per_client: None,
        clip_rate: None,
        ci_halfwidth: None,
        error: None,
    };
    match measure_point(spec, pt, &mut row) {
        Ok(()) => row,
        Err(e) => {
            row.error = Some(e.to_string());
            row
        }
    }
}

struct TrialOutcome {
    sq_err: f64,
    err: Vec<f64>,
    bits: u64,
    clipped_clients: usize,
}

fn measure_point(spec: &SweepSpec, pt: &GridPoint, row: &mut SweepRow) -> Result<()> {
    let mut input_rng = seeding::substream(spec.seed, &[DOMAIN_INPUTS, pt.row_idx]);
    match spec.mechanism {
        MechanismKind::Binary => {
            let plan = binary::make_plan(pt.d, pt.s)?;
            let (v, p) = match spec.mode {
                Mode::Ldp => {
                    let p = dme_core::rr::flip_prob_for_budget(pt.eps / pt.s as f64)?;
                    (pt.eps, p)
                }
                Mode::Mms => binary::mms_params(pt.n, pt.s, pt.eps, pt.delta)?,
            };
            row.v = Some(v);
            row.theory_bound = Some(binary::exact_mse(pt.d, pt.n, pt.s, p)?);
            if spec.mode == Mode::Mms {
                let mc = accounting::MechanismConfig::with_levels(pt.n, pt.d, pt.s, vec![p], v)?;
                row.certified_eps = Some(certified_eps(&mc, pt.eps, pt.delta)?);
            }
            let inputs = binary_inputs(spec, pt, &mut input_rng)?;
            let truth = binary_mean(&inputs);
            let mech = Mechanism::Binary { plan, p };
            let outcomes = run_trials(
                spec,
                pt,
                &ClientInputs::Bits(inputs),
                &mech,
                transport(spec.mode),
                &truth,
            )?;
            finish(row, &outcomes, pt.n, spec.trials, false);
        }
        MechanismKind::Linf => {
            let v = match spec.mode {
                Mode::Ldp => pt.eps,
                Mode::Mms => linf::mms_budget(pt.n, pt.s, pt.eps, pt.delta)?,
            };
            row.v = Some(v);
            let cfg = LinfConfig::new(pt.d, pt.n, pt.m, pt.s, v, spec.r_inf, privacy_mode(spec.mode))?;
            let alloc = cfg.allocation()?;
            // The exact worst-case constant for the realized mechanism; the
            // order-form closed bounds live in dme_core::linf.
            row.theory_bound = Some(linf::exact_sup_mse(&cfg, &alloc)?);
            if spec.mode == Mode::Mms {
                let mc = cfg.mechanism_config(&alloc)?;
                row.certified_eps = Some(certified_eps(&mc, pt.eps, pt.delta)?);
            }
            let inputs = real_inputs(spec, pt.n, pt.d, spec.r_inf, false, &mut input_rng)?;
            let truth = real_mean(&inputs, pt.d);
            let mech = Mechanism::Linf { cfg, alloc };
            let outcomes = run_trials(
                spec,
                pt,
                &ClientInputs::Reals(inputs),
                &mech,
                transport(spec.mode),
                &truth,
            )?;
            finish(row, &outcomes, pt.n, spec.trials, false);
        }
        MechanismKind::L2 => {
            let v = match spec.mode {
                Mode::Ldp => pt.eps,
                Mode::Mms => linf::mms_budget(pt.n, pt.s, pt.eps, pt.delta)?,
            };
            row.v = Some(v);
            let cfg = L2Config::new(
                pt.d,
                pt.n,
                pt.m,
                pt.s,
                v,
                spec.r2,
                spec.beta,
                spec.rotation_seed,
                privacy_mode(spec.mode),
            )?;
            let alloc = cfg.allocation()?;
            // Sharp bound on the rotated domain; the inverse rotation is
            // orthogonal and truncation only shrinks the error.
            row.theory_bound = Some(linf::exact_sup_mse(&cfg.inner, &alloc)?);
            if spec.mode == Mode::Mms {
                let mc = cfg.inner.mechanism_config(&alloc)?;
                row.certified_eps = Some(certified_eps(&mc, pt.eps, pt.delta)?);
            }
            let inputs = real_inputs(spec, pt.n, pt.d, spec.r2, true, &mut input_rng)?;
            let truth = real_mean(&inputs, pt.d);
            let mech = Mechanism::L2 { cfg, alloc };
            let outcomes = run_trials(
                spec,
                pt,
                &ClientInputs::Reals(inputs),
                &mech,
                transport(spec.mode),
                &truth,
            )?;
            finish(row, &outcomes, pt.n, spec.trials, true);
        }
        MechanismKind::Laplace => {
            if spec.mode != Mode::Ldp {
                return Err(DmeError::InvalidParameter(
                    "the Laplace baseline is LDP-only".into(),
                ));
            }
            row.theory_bound = Some(laplace::baseline_mse(pt.n, pt.d, spec.r_inf, pt.eps)?);
            let inputs = real_inputs(spec, pt.n, pt.d, spec.r_inf, false, &mut input_rng)?;
            let truth = real_mean(&inputs, pt.d);
            let outcomes: Vec<TrialOutcome> = (0..spec.trials as u64)
                .into_par_iter()
                .map(|t| {
                    let master = seeding::derive_seed(spec.seed, &[DOMAIN_TRIAL, pt.row_idx, t]);
                    let mut rng = seeding::substream(master, &[0]);
                    let mut mean = vec![0.0f64; pt.d];
                    for x in &inputs {
                        let noisy = laplace::randomize(x, spec.r_inf, pt.eps, &mut rng);
                        for (mj, yj) in mean.iter_mut().zip(noisy.iter()) {
                            *mj += yj / pt.n as f64;
                        }
                    }
                    let err: Vec<f64> = mean
                        .iter()
                        .zip(truth.iter())
                        .map(|(a, b)| a - b)
                        .collect();
                    TrialOutcome {
                        sq_err: err.iter().map(|e| e * e).sum(),
                        err,
                        bits: 0,
                        clipped_clients: 0,
                    }
                })
                .collect();
            finish(row, &outcomes, pt.n, spec.trials, false);
            row.bits_per_client = None; // unbounded-support baseline
        }
    }
    Ok(())
}

fn transport(mode: Mode) -> TransportMode {
    match mode {
        Mode::Ldp => TransportMode::Direct,
        Mode::Mms => TransportMode::Shuffled,
    }
}

fn privacy_mode(mode: Mode) -> PrivacyMode {
    match mode {
        Mode::Ldp => PrivacyMode::Ldp,
        Mode::Mms => PrivacyMode::Mms,
    }
}

fn certified_eps(
    mc: &accounting::MechanismConfig,
    eps: f64,
    delta: f64,
) -> Result<f64> {
    match accounting::certify(mc, CertifyTarget::Mms { eps, delta }) {
        Ok(report) => Ok(report.achieved_eps),
        Err(DmeError::CertificationFailed { achieved, .. }) => Ok(achieved),
        Err(e) => Err(e),
    }
}

fn run_trials(
    spec: &SweepSpec,
    pt: &GridPoint,
    inputs: &ClientInputs,
    mech: &Mechanism,
    transport: TransportMode,
    truth: &[f64],
) -> Result<Vec<TrialOutcome>> {
    (0..spec.trials as u64)
        .into_par_iter()
        .map(|t| {
            let master = seeding::derive_seed(spec.seed, &[DOMAIN_TRIAL, pt.row_idx, t]);
            let out = run_pipeline(inputs, mech, transport, master)?;
            let err: Vec<f64> = out
                .estimate
                .iter()
                .zip(truth.iter())
                .map(|(a, b)| a - b)
                .collect();
            Ok(TrialOutcome {
                sq_err: err.iter().map(|e| e * e).sum(),
                err,
                bits: out.transcript.bits_per_client.first().copied().unwrap_or(0),
                clipped_clients: out
                    .transcript
                    .clip_counts
                    .iter()
                    .filter(|&&c| c > 0)
                    .count(),
            })
        })
        .collect()
}

fn finish(row: &mut SweepRow, outcomes: &[TrialOutcome], n: usize, trials: usize, is_l2: bool) {
    let t_f = trials as f64;
    let mse = outcomes.iter().map(|o| o.sq_err).sum::<f64>() / t_f;
    let var = outcomes
        .iter()
        .map(|o| (o.sq_err - mse) * (o.sq_err - mse))
        .sum::<f64>()
        / t_f.max(2.0);
    let d = outcomes.first().map_or(0, |o| o.err.len());
    let mut bias = vec![0.0f64; d];
    for o in outcomes {
        for (bj, ej) in bias.iter_mut().zip(o.err.iter()) {
            *bj += ej / t_f;
        }
    }
    row.empirical_mse = Some(mse);
    row.empirical_bias_norm = Some(bias.iter().map(|b| b * b).sum::<f64>().sqrt());
    row.ci_halfwidth = Some(1.96 * (var / t_f).sqrt());
    row.bits_per_client = outcomes.first().map(|o| o.bits);
    if is_l2 {
        let clipped: usize = outcomes.iter().map(|o| o.clipped_clients).sum();
        row.clip_rate = Some(clipped as f64 / (t_f * n as f64));
    }
}

fn binary_inputs<R: Rng>(
    spec: &SweepSpec,
    pt: &GridPoint,
    rng: &mut R,
) -> Result<Vec<BinaryVector>> {
    (0..pt.n)
        .map(|_| match spec.input {
            InputKind::Uniform => Ok(BinaryVector::random(pt.d, rng)),
            InputKind::Ones => Ok(BinaryVector::ones(pt.d)),
            InputKind::Zero => Ok(BinaryVector::zeros(pt.d)),
            InputKind::Const(c) => {
                if c == 0.0 {
                    Ok(BinaryVector::zeros(pt.d))
                } else if c == 1.0 {
                    Ok(BinaryVector::ones(pt.d))
                } else {
                    Err(DmeError::InvalidParameter(format!(
                        "binary inputs must be 0 or 1, got {c}"
                    )))
                }
            }
        })
        .collect()
}

fn binary_mean(inputs: &[BinaryVector]) -> Vec<f64> {
    let d = inputs[0].dim();
    let mut mean = vec![0.0; d];
    for b in inputs {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += b.get(j) as f64 / inputs.len() as f64;
        }
    }
    mean
}

fn real_inputs<R: Rng>(
    spec: &SweepSpec,
    n: usize,
    d: usize,
    radius: f64,
    l2_ball: bool,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    (0..n)
        .map(|_| match spec.input {
            InputKind::Uniform => {
                if l2_ball {
                    // Uniform direction, radius pushed outward by u^(1/d).
                    let mut x: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
                    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                    let r = radius * rng.gen_range(0.0f64..1.0).powf(1.0 / d as f64);
                    for v in &mut x {
                        *v *= r / norm;
                    }
                    Ok(x)
                } else {
                    Ok((0..d).map(|_| rng.gen_range(-radius..=radius)).collect())
                }
            }
            InputKind::Ones => {
                if l2_ball {
                    Ok(vec![radius / (d as f64).sqrt(); d])
                } else {
                    Ok(vec![radius; d])
                }
            }
            InputKind::Zero => Ok(vec![0.0; d]),
            InputKind::Const(c) => {
                let x = vec![c; d];
                let norm = if l2_ball {
                    x.iter().map(|v| v * v).sum::<f64>().sqrt()
                } else {
                    c.abs()
                };
                if norm > radius * (1.0 + 1e-12) {
                    Err(DmeError::InvalidParameter(format!(
                        "constant input {c} outside the radius-{radius} ball"
                    )))
                } else {
                    Ok(x)
                }
            }
        })
        .collect()
}

fn real_mean(inputs: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut mean = vec![0.0; d];
    for x in inputs {
        for (m, xj) in mean.iter_mut().zip(x.iter()) {
            *m += xj / inputs.len() as f64;
        }
    }
    mean
}

/// Standard normal draw (Box–Muller).
fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
