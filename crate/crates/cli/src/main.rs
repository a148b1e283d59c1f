//! Command-line front end: Monte-Carlo sweeps, privacy certification,
//! quantizer checks, the toy private SGD loop, and wire-format round trips.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use dme_cli::config::Config;
use dme_cli::{dpsgd, sweep};
use dme_core::accounting::{self, CertificationReport, CertifyTarget, MechanismConfig};
use dme_core::linf;
use dme_core::quantize::{self, UnitVector01};
use dme_core::rr;
use dme_core::seeding;
use dme_core::wire;

#[derive(Parser)]
#[command(name = "dme", about = "Private distributed mean estimation toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo sweep from a config file and emit CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// Worker threads (results are identical for any count).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Certify a mechanism configuration against a privacy target.
    Accountant {
        /// `binary` or `linf` (the ℓ2 mechanism certifies as its inner ℓ∞).
        #[arg(long, default_value = "binary")]
        mechanism: String,
        /// `ldp` or `mms`.
        #[arg(long, default_value = "mms")]
        mode: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long, default_value_t = 1)]
        s: usize,
        #[arg(long, default_value_t = 1)]
        m: usize,
        /// Total budget parameter; solved from (eps, delta) when omitted.
        #[arg(long)]
        v: Option<f64>,
        /// Target ε (central in mms mode, ε0 in ldp mode).
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        /// Append the machine-readable record to this CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decompose values into bit levels and check the reconstruction.
    Quantize {
        /// Comma-separated values in [0, 1].
        #[arg(long)]
        values: String,
        #[arg(long, default_value_t = 3)]
        m: usize,
        #[arg(long, default_value_t = 100000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the toy private SGD loop from a config file.
    Dpsgd {
        #[arg(long)]
        config: PathBuf,
        /// Write the loss trace as CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Randomize an input vector and write its wire-format record.
    Encode {
        /// `binary` (0/1 entries) or `linf` (reals in the r∞ ball).
        #[arg(long, default_value = "binary")]
        mechanism: String,
        /// Input file: whitespace- or comma-separated numbers.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        s: usize,
        #[arg(long, default_value_t = 1)]
        m: usize,
        /// Total privacy budget (ε0 for binary, v for linf).
        #[arg(long, default_value_t = 1.0)]
        budget: f64,
        #[arg(long, default_value_t = 1.0)]
        r_inf: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the records of a wire-format file.
    Decode {
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Sweep {
            config,
            out,
            seed,
            trials,
            threads,
        } => cmd_sweep(config, out, seed, trials, threads),
        Command::Accountant {
            mechanism,
            mode,
            n,
            d,
            s,
            m,
            v,
            eps,
            delta,
            out,
        } => cmd_accountant(mechanism, mode, n, d, s, m, v, eps, delta, out),
        Command::Quantize {
            values,
            m,
            trials,
            seed,
        } => cmd_quantize(values, m, trials, seed),
        Command::Dpsgd { config, out, seed } => cmd_dpsgd(config, out, seed),
        Command::Encode {
            mechanism,
            input,
            out,
            s,
            m,
            budget,
            r_inf,
            seed,
        } => cmd_encode(mechanism, input, out, s, m, budget, r_inf, seed),
        Command::Decode { input } => cmd_decode(input),
    }
}

fn write_out(out: Option<PathBuf>, content: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            std::fs::write(&path, content)
                .with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn cmd_sweep(
    config: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    trials: Option<usize>,
    threads: Option<usize>,
) -> anyhow::Result<()> {
    let cfg = Config::load(&config)?;
    let mut spec = sweep::SweepSpec::from_config(&cfg)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(t) = trials {
        spec.trials = t;
    }
    let rows = match threads {
        Some(t) => sweep::run_sweep_with_threads(&spec, t)?,
        None => sweep::run_sweep(&spec),
    };
    write_out(out, &sweep::to_csv(&rows))
}

#[allow(clippy::too_many_arguments)]
fn cmd_accountant(
    mechanism: String,
    mode: String,
    n: usize,
    d: usize,
    s: usize,
    m: usize,
    v: Option<f64>,
    eps: f64,
    delta: f64,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let is_mms = match mode.as_str() {
        "mms" => true,
        "ldp" => false,
        other => bail!("unknown mode `{other}`"),
    };
    let mc: MechanismConfig = match mechanism.as_str() {
        "binary" => {
            let v = match v {
                Some(v) => v,
                None if is_mms => dme_core::binary::mms_params(n, s, eps, delta)?.0,
                None => eps,
            };
            MechanismConfig::binary(n, d, s, v)?
        }
        "linf" | "l2" => {
            let v = match v {
                Some(v) => v,
                None if is_mms => linf::mms_budget(n, s, eps, delta)?,
                None => eps,
            };
            let alloc = linf::allocate_budgets(v, m, s)?;
            MechanismConfig::with_levels(n, d, s, alloc.p_k, v)?
        }
        other => bail!("unknown mechanism `{other}`"),
    };
    let target = if is_mms {
        CertifyTarget::Mms { eps, delta }
    } else {
        CertifyTarget::Ldp { eps0: eps }
    };
    let report = accounting::certify(&mc, target)?;
    print_certification(&report);
    if is_mms {
        println!(
            "suggested levels for this regime: m = {}",
            linf::recommended_levels(n, eps, d)
        );
    }
    if let Some(path) = out {
        let exists = path.exists();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        if !exists {
            writeln!(f, "{}", CertificationReport::CSV_HEADER)?;
        }
        writeln!(f, "{}", report.csv_row())?;
        eprintln!("appended record to {}", path.display());
    }
    Ok(())
}

fn print_certification(report: &CertificationReport) {
    println!(
        "mode {}  n={} d={} s={} m={}  v={:.6}",
        report.mode, report.n, report.d, report.s, report.m, report.v
    );
    println!("level  flip_prob   message_ldp  level_ldp   rdp_rate");
    for l in &report.levels {
        println!(
            "{:>5}  {:<10.6} {:<12.6} {:<11.6} {:.3e}",
            l.level, l.flip_prob, l.message_ldp, l.level_ldp, l.rdp_rate
        );
    }
    match report.target_delta {
        Some(delta) => println!("target: ({}, {}) central DP", report.target_eps, delta),
        None => println!("target: {} local DP", report.target_eps),
    }
    if let Some(c) = report.closed_form_eps {
        println!("closed-form epsilon: {c:.6}");
    }
    if let Some(c) = report.converted_eps {
        println!(
            "converted epsilon:   {c:.6} (alpha* = {:.3})",
            report.alpha_star.unwrap_or(f64::NAN)
        );
    }
    match report.girgis_eps {
        Some(g) => println!("explicit-lemma cross-check: {g:.6}"),
        None => println!("explicit-lemma cross-check: unavailable at these parameters"),
    }
    for note in &report.notes {
        println!("note: {note}");
    }
    println!("achieved epsilon: {:.6}  -> CERTIFIED", report.achieved_eps);
}

fn cmd_quantize(values: String, m: usize, trials: usize, seed: u64) -> anyhow::Result<()> {
    let parsed: Vec<f64> = values
        .split(',')
        .map(|x| x.trim().parse::<f64>().context("bad value"))
        .collect::<anyhow::Result<_>>()?;
    let z = UnitVector01::new(parsed.clone())?;
    let mut rng = seeding::substream(seed, &[0]);
    let dec = quantize::decompose(&z, m, &mut rng)?;
    for (k, level) in dec.levels.iter().enumerate() {
        println!("level {:>2} (weight 2^-{}): {:?}", k + 1, k + 1, level.bits());
    }
    println!(
        "top-up   (weight 2^-{}): {:?}  [one draw]",
        m - 1,
        dec.top_up.bits()
    );

    let d = z.dim();
    let mut mean = vec![0.0f64; d];
    let mut mse = 0.0f64;
    for _ in 0..trials {
        let rec = quantize::reconstruct(&quantize::decompose(&z, m, &mut rng)?);
        for j in 0..d {
            mean[j] += rec[j] / trials as f64;
            let e = rec[j] - z.values()[j];
            mse += e * e / trials as f64;
        }
    }
    println!("input:          {parsed:?}");
    println!("empirical mean: {mean:?}");
    println!(
        "empirical mse:  {mse:.6e}  (bound d/4^m = {:.6e})",
        quantize::mse_bound(d, m)
    );
    Ok(())
}

fn cmd_dpsgd(config: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> anyhow::Result<()> {
    let cfg = Config::load(&config)?;
    let mut spec = dpsgd::SgdSpec::from_config(&cfg)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let run = dpsgd::run(&spec)?;
    println!("privacy report:");
    println!("  eps_tilde (per round):   {:.6}", run.report.eps_tilde);
    println!("  v (per round):           {:.6}", run.report.v_round);
    println!("  sampling ratio q:        {:.6}", run.report.sampling_q);
    println!("  eps_t (subsampled):      {:.6}", run.report.eps_round);
    println!("  eps_total (composition): {:.6}", run.report.eps_total);
    println!("  clipped coordinates:     {}", run.clip_events);
    let mut csv = String::from("round,loss\n");
    for (i, loss) in run.losses.iter().enumerate() {
        csv.push_str(&format!("{i},{loss}\n"));
    }
    write_out(out, &csv)
}

#[allow(clippy::too_many_arguments)]
fn cmd_encode(
    mechanism: String,
    input: PathBuf,
    out: PathBuf,
    s: usize,
    m: usize,
    budget: f64,
    r_inf: f64,
    seed: u64,
) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&input)
        .with_context(|| format!("reading {}", input.display()))?;
    let numbers: Vec<f64> = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().context("bad number in input"))
        .collect::<anyhow::Result<_>>()?;
    if numbers.is_empty() {
        bail!("empty input vector");
    }
    let d = numbers.len();
    let mut rng = seeding::substream(seed, &[0]);
    let (bytes, bits) = match mechanism.as_str() {
        "binary" => {
            let bits_in: Vec<u8> = numbers
                .iter()
                .map(|&x| {
                    if x == 0.0 || x == 1.0 {
                        Ok(x as u8)
                    } else {
                        Err(anyhow::anyhow!("binary input entries must be 0 or 1"))
                    }
                })
                .collect::<anyhow::Result<_>>()?;
            let b = dme_core::binary::BinaryVector::new(bits_in)?;
            let plan = dme_core::binary::make_plan(d, s)?;
            let p = rr::flip_prob_for_budget(budget / s as f64)?;
            let bundle = dme_core::binary::randomize(&b, &plan, p, &mut rng)?;
            wire::encode_bundle(&bundle, 0)?
        }
        "linf" => {
            let cfg = linf::LinfConfig::new(d, 1, m, s, budget, r_inf, linf::PrivacyMode::Ldp)?;
            let alloc = cfg.allocation()?;
            let bundle = linf::randomize(&numbers, &cfg, &alloc, &mut rng)?;
            wire::encode_linf_bundle(&bundle)?
        }
        other => bail!("unknown mechanism `{other}`"),
    };
    std::fs::write(&out, &bytes).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "encoded {} coordinates into {} bytes ({bits} payload bits + headers)",
        d,
        bytes.len()
    );
    Ok(())
}

fn cmd_decode(input: PathBuf) -> anyhow::Result<()> {
    let bytes = std::fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
    let mut cursor = 0usize;
    let mut record = 0usize;
    println!("record,level,d,s,p,message,coord,value_bit");
    while cursor < bytes.len() {
        let (bundle, level, used) = wire::decode_bundle(&bytes[cursor..])?;
        for (j, msg) in bundle.messages.iter().enumerate() {
            println!(
                "{record},{level},{},{},{},{j},{},{}",
                bundle.plan.d,
                bundle.plan.s,
                bundle.p.get(),
                msg.coord,
                msg.value_bit as u8
            );
        }
        cursor += used;
        record += 1;
    }
    Ok(())
}
