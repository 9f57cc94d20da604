//! Command-line front end: single runs, sweeps, the invariant suite, and
//! closed-form cost prediction.

use std::fs;
use std::path::PathBuf;
use std::process;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use dpm::harness::{
    emit_csv, load_config, run_sweep, run_trial, Algorithm, Averaging, Decomposition,
    ExperimentConfig, GossipConfig, SweepAxis, TrialResult, DEFAULT_GOSSIP_GRID,
};
use dpm::metrics::{nmse_evd, nmse_svd, predicted_handshakes, HandshakePlan};
use dpm::{Error, Result};

#[derive(Parser)]
#[command(name = "dpm", version, about = "Gossip-based distributed power method simulator")]
struct Cli {
    /// Override run.base_seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override run.trials from the config.
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Write the primary artifact here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured trials and print an aggregate summary.
    Run(RunArgs),
    /// Sweep one axis over both distributed algorithms and emit CSV.
    Sweep(SweepArgs),
    /// Exercise the built-in invariant suite.
    Validate,
    /// Print the closed-form shaking-hand count for a run shape.
    PredictCost(PredictArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat dotted-key config file; stock defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Flat dotted-key config file; stock defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Axis to vary: k (gossip rounds), h (components), iters.
    #[arg(long, default_value = "k")]
    axis: String,
    /// Axis values; defaults to the stock gossip grid for axis k.
    #[arg(long, value_delimiter = ',')]
    values: Vec<u64>,
}

#[derive(Args)]
struct PredictArgs {
    /// sequential or parallel.
    #[arg(long)]
    algorithm: String,
    /// evd or svd.
    #[arg(long)]
    decomposition: String,
    /// Component count H.
    #[arg(long)]
    components: u64,
    /// Power iterations before the final normalization.
    #[arg(long)]
    power_iters: u64,
    /// Gossip rounds per session on set S (the only set for EVD).
    #[arg(long, alias = "k")]
    k1: u64,
    /// Gossip rounds per session on set R; SVD only.
    #[arg(long)]
    k2: Option<u64>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err}");
        process::exit(err.exit_code());
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(ref args) => run_command(&cli, args),
        Command::Sweep(ref args) => sweep_command(&cli, args),
        Command::Validate => validate_command(),
        Command::PredictCost(ref args) => predict_command(&cli, args),
    }
}

fn effective_config(cli: &Cli, path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.base_seed = seed;
    }
    if let Some(trials) = cli.trials {
        cfg.run.trials = trials;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_command(cli: &Cli, args: &RunArgs) -> Result<()> {
    let cfg = effective_config(cli, &args.config)?;
    let results: Vec<TrialResult> = (0..cfg.run.trials)
        .into_par_iter()
        .map(|t| run_trial(&cfg, t))
        .collect::<Result<_>>()?;

    let n = results.len() as f64;
    let mean_nmse = results.iter().map(|r| r.nmse).sum::<f64>() / n;
    let mean_rounds = results
        .iter()
        .map(|r| r.ledger.gossip_rounds as f64)
        .sum::<f64>()
        / n;
    let guarded_sigma: u64 = results
        .iter()
        .map(|r| r.diagnostics.guarded_sigma_estimates)
        .sum();
    let guarded_norms: u64 = results.iter().map(|r| r.diagnostics.guarded_norms).sum();
    let max_imag = results
        .iter()
        .map(|r| r.diagnostics.max_sigma_imag)
        .fold(0.0f64, f64::max);

    println!("decomposition {}", cfg.run.decomposition);
    println!("algorithm {}", cfg.run.algorithm);
    println!("averaging {}", cfg.run.averaging);
    println!("trials {}", results.len());
    println!("mean_nmse {mean_nmse}");
    println!("mean_gossip_rounds {mean_rounds}");
    println!("guarded_sigma_estimates {guarded_sigma}");
    println!("guarded_norms {guarded_norms}");
    println!("max_sigma_imag {max_imag}");

    if let Some(path) = &cli.out {
        let blob = serde_json::to_string_pretty(&results)
            .map_err(|e| Error::Numeric(format!("serializing results: {e}")))?;
        fs::write(path, blob)?;
    }
    Ok(())
}

fn sweep_command(cli: &Cli, args: &SweepArgs) -> Result<()> {
    let cfg = effective_config(cli, &args.config)?;
    let axis: SweepAxis = args.axis.parse()?;
    let values: Vec<u64> = if !args.values.is_empty() {
        args.values.clone()
    } else if axis == SweepAxis::GossipRounds {
        DEFAULT_GOSSIP_GRID.to_vec()
    } else {
        return Err(Error::Parameter(format!(
            "axis {axis} has no default grid, pass --values"
        )));
    };
    let sweep = run_sweep(&cfg, axis, &values)?;
    let csv = emit_csv(&sweep);
    match &cli.out {
        Some(path) => fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn predict_command(cli: &Cli, args: &PredictArgs) -> Result<()> {
    let algorithm: Algorithm = args.algorithm.parse()?;
    let decomposition: Decomposition = args.decomposition.parse()?;
    let plan = match (algorithm, decomposition) {
        (Algorithm::Centralized, _) => {
            return Err(Error::Parameter(
                "centralized runs execute no gossip rounds; pick sequential or parallel".into(),
            ))
        }
        (Algorithm::Sequential, Decomposition::Evd) => {
            reject_k2(args)?;
            HandshakePlan::SequentialEvd { k: args.k1 }
        }
        (Algorithm::Parallel, Decomposition::Evd) => {
            reject_k2(args)?;
            HandshakePlan::ParallelEvd { k: args.k1 }
        }
        (Algorithm::Sequential, Decomposition::Svd) => HandshakePlan::SequentialSvd {
            k1: args.k1,
            k2: require_k2(args)?,
        },
        (Algorithm::Parallel, Decomposition::Svd) => HandshakePlan::ParallelSvd {
            k1: args.k1,
            k2: require_k2(args)?,
        },
    };
    let count = predicted_handshakes(plan, args.components, args.power_iters);
    match &cli.out {
        Some(path) => fs::write(path, format!("{count}\n"))?,
        None => println!("{count}"),
    }
    Ok(())
}

fn reject_k2(args: &PredictArgs) -> Result<()> {
    if args.k2.is_some() {
        return Err(Error::Parameter(
            "--k2 only applies to svd; EVD runs use one node set".into(),
        ));
    }
    Ok(())
}

fn require_k2(args: &PredictArgs) -> Result<u64> {
    args.k2
        .ok_or_else(|| Error::Parameter("svd needs --k2 for the second node set".into()))
}

/// Small fixed configuration shared by the validation checks.
fn check_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.signal.s_nodes = 8;
    cfg.signal.r_nodes = 9;
    cfg.signal.s_sources = 3;
    cfg.signal.r_sources = 3;
    cfg.signal.shared_sources = true;
    cfg.signal.snapshots = 30;
    cfg.power.power_iters = 5;
    cfg.power.num_components = 2;
    cfg.gossip = GossipConfig { k1: 15, k2: 20 };
    cfg.run.trials = 2;
    cfg
}

fn validate_command() -> Result<()> {
    let checks: [(&str, fn() -> Result<()>); 5] = [
        ("ledger matches the closed-form counts", check_ledger_identity),
        ("exact averaging reproduces centralized", check_exact_equivalence),
        ("H = 1 runs sequential and parallel identically", check_h1_identity),
        ("metric identities hold", check_metrics),
        ("sweep output is deterministic", check_sweep_determinism),
    ];
    let mut failures = 0;
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("ok   {name}"),
            Err(err) => {
                failures += 1;
                println!("FAIL {name}: {err}");
            }
        }
    }
    if failures > 0 {
        return Err(Error::Numeric(format!(
            "{failures} of {} validation checks failed",
            checks.len()
        )));
    }
    Ok(())
}

fn check_ledger_identity() -> Result<()> {
    for decomposition in [Decomposition::Evd, Decomposition::Svd] {
        for algorithm in [Algorithm::Sequential, Algorithm::Parallel] {
            let mut cfg = check_config();
            cfg.run.decomposition = decomposition;
            cfg.run.algorithm = algorithm;
            let result = run_trial(&cfg, 0)?;
            let plan = cfg
                .handshake_plan()
                .ok_or_else(|| Error::Parameter("expected a gossip plan".into()))?;
            let expected = predicted_handshakes(
                plan,
                cfg.power.num_components as u64,
                cfg.power.power_iters as u64,
            );
            if result.ledger.gossip_rounds != expected {
                return Err(Error::Numeric(format!(
                    "{algorithm} {decomposition}: measured {} rounds, predicted {expected}",
                    result.ledger.gossip_rounds
                )));
            }
        }
    }
    Ok(())
}

fn check_exact_equivalence() -> Result<()> {
    for decomposition in [Decomposition::Evd, Decomposition::Svd] {
        let mut cfg = check_config();
        cfg.run.decomposition = decomposition;
        cfg.run.averaging = Averaging::Exact;
        let seq = run_trial(&cfg, 0)?;
        cfg.run.algorithm = Algorithm::Centralized;
        let cen = run_trial(&cfg, 0)?;
        let rel = (seq.nmse - cen.nmse).abs() / cen.nmse.max(1e-30);
        if rel > 1e-9 {
            return Err(Error::Numeric(format!(
                "{decomposition}: exact-mode NMSE drifted from centralized by {rel:.3e}"
            )));
        }
    }
    Ok(())
}

fn check_h1_identity() -> Result<()> {
    let mut cfg = check_config();
    cfg.run.decomposition = Decomposition::Svd;
    cfg.power.num_components = 1;
    let seq = run_trial(&cfg, 0)?;
    cfg.run.algorithm = Algorithm::Parallel;
    let par = run_trial(&cfg, 0)?;
    if seq.nmse.to_bits() != par.nmse.to_bits() || seq.sigma_estimates != par.sigma_estimates {
        return Err(Error::Numeric(
            "H = 1 sequential and parallel runs disagree".into(),
        ));
    }
    Ok(())
}

fn check_metrics() -> Result<()> {
    if nmse_evd(&[2.0, 1.0], &[2.0, 0.0])? != 0.2 {
        return Err(Error::Numeric("nmse_evd([2,1],[2,0]) is not 0.2".into()));
    }
    let cfg = check_config();
    let samples = dpm::signal::generate_passive_radar(&cfg.signal)?;
    let r_sr =
        dpm::signal::sample_cross_correlation(&samples.s_samples, &samples.r_samples)?;
    let (u, _, v) = dpm::linalg::svd(&r_sr);
    let u = u.slice(ndarray::s![.., ..2]).to_owned();
    let v = v.slice(ndarray::s![.., ..2]).to_owned();
    for i in 0..16 {
        let phi = i as f64 * std::f64::consts::TAU / 16.0;
        let c = num_complex::Complex64::from_polar(1.0, phi);
        let err = nmse_svd(&u.mapv(|z| z * c), &v.mapv(|z| z * c), &u, &v)?;
        if err > 1e-12 {
            return Err(Error::Numeric(format!(
                "nmse_svd not phase invariant: {err:.3e} at phase {phi:.3}"
            )));
        }
    }
    Ok(())
}

fn check_sweep_determinism() -> Result<()> {
    let mut cfg = check_config();
    cfg.run.trials = 2;
    let first = emit_csv(&run_sweep(&cfg, SweepAxis::GossipRounds, &[5, 9])?);
    let second = emit_csv(&run_sweep(&cfg, SweepAxis::GossipRounds, &[5, 9])?);
    if first != second {
        return Err(Error::Numeric("sweep reruns are not byte-identical".into()));
    }
    Ok(())
}
