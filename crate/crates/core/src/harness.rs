//! Trial and sweep orchestration: configuration, per-trial seeding, ground
//! truth, aggregation, and CSV emission.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::s;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::CommLedger;
use crate::error::{Error, Result};
use crate::linalg::{hermitian_evd, svd, CMatrix};
use crate::metrics::{nmse_evd, nmse_svd, HandshakePlan};
use crate::power::{
    centralized_power_evd, centralized_power_svd, parallel_power_evd, parallel_power_svd,
    sequential_power_evd, sequential_power_svd, AveragingMode, BridgeMap, PowerConfig,
    PowerDiagnostics,
};
use crate::signal::{
    generate_passive_radar, sample_covariance, sample_cross_correlation, SampleSet,
    SignalModelConfig,
};
use crate::topology::generate_small_world;

/// Which factorization a trial estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decomposition {
    Evd,
    Svd,
}

/// Which estimator runs: the in-memory reference or a distributed variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Centralized,
    Sequential,
    Parallel,
}

/// How consensus averages are produced in distributed runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Exact,
    Gossip,
}

impl fmt::Display for Decomposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decomposition::Evd => "evd",
            Decomposition::Svd => "svd",
        })
    }
}

impl FromStr for Decomposition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "evd" => Ok(Decomposition::Evd),
            "svd" => Ok(Decomposition::Svd),
            other => Err(Error::Parameter(format!(
                "unknown decomposition {other:?}, expected evd or svd"
            ))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Centralized => "centralized",
            Algorithm::Sequential => "sequential",
            Algorithm::Parallel => "parallel",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centralized" => Ok(Algorithm::Centralized),
            "sequential" => Ok(Algorithm::Sequential),
            "parallel" => Ok(Algorithm::Parallel),
            other => Err(Error::Parameter(format!(
                "unknown algorithm {other:?}, expected centralized, sequential, or parallel"
            ))),
        }
    }
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Averaging::Exact => "exact",
            Averaging::Gossip => "gossip",
        })
    }
}

impl FromStr for Averaging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Averaging::Exact),
            "gossip" => Ok(Averaging::Gossip),
            other => Err(Error::Parameter(format!(
                "unknown averaging {other:?}, expected exact or gossip"
            ))),
        }
    }
}

/// Watts-Strogatz parameters for one set's gossip graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Node count; leave unset to inherit the signal section's count for
    /// this set. When set it must agree with that count.
    pub n: Option<usize>,
    /// Ring degree (even).
    pub k: usize,
    /// Rewiring probability.
    pub p: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            n: None,
            k: 4,
            p: 0.2,
        }
    }
}

/// Gossip round budgets: `k1` drives set S (the only set in EVD runs),
/// `k2` set R.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GossipConfig {
    pub k1: u64,
    pub k2: u64,
}

impl Default for GossipConfig {
    fn default() -> Self {
        GossipConfig { k1: 200, k2: 200 }
    }
}

/// Estimator selection and trial bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub decomposition: Decomposition,
    pub algorithm: Algorithm,
    pub averaging: Averaging,
    pub trials: u64,
    pub base_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            decomposition: Decomposition::Evd,
            algorithm: Algorithm::Sequential,
            averaging: Averaging::Gossip,
            trials: 50,
            base_seed: 0,
        }
    }
}

/// Full experiment description. Every key has a default, so a config file
/// only states what differs from the stock setup.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub signal: SignalModelConfig,
    pub power: PowerConfig,
    pub graph_s: GraphConfig,
    pub graph_r: GraphConfig,
    pub gossip: GossipConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.signal.validate()?;
        self.power.validate()?;
        if self.run.trials == 0 {
            return Err(Error::Parameter("trials must be at least 1".into()));
        }
        if let Some(n) = self.graph_s.n {
            if n != self.signal.s_nodes {
                return Err(Error::Parameter(format!(
                    "graph_s.n = {n} disagrees with signal.s_nodes = {}",
                    self.signal.s_nodes
                )));
            }
        }
        if let Some(n) = self.graph_r.n {
            if n != self.signal.r_nodes {
                return Err(Error::Parameter(format!(
                    "graph_r.n = {n} disagrees with signal.r_nodes = {}",
                    self.signal.r_nodes
                )));
            }
        }
        if self.run.averaging == Averaging::Gossip && (self.gossip.k1 == 0 || self.gossip.k2 == 0)
        {
            return Err(Error::Parameter(
                "gossip round counts must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Averaging mode handed to the distributed algorithms.
    pub fn averaging_mode(&self) -> AveragingMode {
        match self.run.averaging {
            Averaging::Exact => AveragingMode::Exact,
            Averaging::Gossip => AveragingMode::Gossip {
                k1: self.gossip.k1,
                k2: self.gossip.k2,
            },
        }
    }

    /// Closed-form handshake count matching this config, when one applies
    /// (gossip averaging and a distributed algorithm).
    pub fn handshake_plan(&self) -> Option<HandshakePlan> {
        if self.run.averaging != Averaging::Gossip {
            return None;
        }
        let (k1, k2) = (self.gossip.k1, self.gossip.k2);
        match (self.run.algorithm, self.run.decomposition) {
            (Algorithm::Centralized, _) => None,
            (Algorithm::Sequential, Decomposition::Evd) => {
                Some(HandshakePlan::SequentialEvd { k: k1 })
            }
            (Algorithm::Parallel, Decomposition::Evd) => Some(HandshakePlan::ParallelEvd { k: k1 }),
            (Algorithm::Sequential, Decomposition::Svd) => {
                Some(HandshakePlan::SequentialSvd { k1, k2 })
            }
            (Algorithm::Parallel, Decomposition::Svd) => {
                Some(HandshakePlan::ParallelSvd { k1, k2 })
            }
        }
    }
}

/// Parses the flat dotted-key config text (TOML grammar, e.g.
/// `signal.snapshots = 500`).
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

const STREAM_DATA: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_GRAPH_S: u64 = 3;
const STREAM_GRAPH_R: u64 = 4;

/// SplitMix64 finalizer decorrelating the per-purpose seed streams of one
/// trial. The trial seed itself is `base_seed ^ trial_index`.
fn sub_seed(trial_seed: u64, stream: u64) -> u64 {
    let mut z = trial_seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything one trial produced, sufficient to audit the headline number.
#[derive(Debug, Clone, Serialize)]
pub struct TrialResult {
    pub trial_index: u64,
    /// Headline NMSE: eigenvalue NMSE averaged over nodes for EVD runs,
    /// vector NMSE of the network-assembled factors for SVD runs.
    pub nmse: f64,
    /// Per-node value NMSE; SVD rows list set S first, then set R.
    pub per_node_nmse: Vec<f64>,
    /// Per node, the H complex sigma estimates, same row order.
    pub sigma_estimates: Vec<Vec<Complex64>>,
    pub ledger: CommLedger,
    pub diagnostics: PowerDiagnostics,
}

/// Runs one trial: draws data, builds graphs, runs the configured
/// estimator, and scores it against the exact factorization of the same
/// sample matrix.
pub fn run_trial(cfg: &ExperimentConfig, trial_index: u64) -> Result<TrialResult> {
    cfg.validate()?;
    let trial_seed = cfg.run.base_seed ^ trial_index;
    let mut signal_cfg = cfg.signal.clone();
    signal_cfg.seed = sub_seed(trial_seed, STREAM_DATA);
    let samples = generate_passive_radar(&signal_cfg)?;
    let init_seed = sub_seed(trial_seed, STREAM_INIT);
    match cfg.run.decomposition {
        Decomposition::Evd => evd_trial(cfg, &samples, trial_seed, init_seed, trial_index),
        Decomposition::Svd => svd_trial(cfg, &samples, trial_seed, init_seed, trial_index),
    }
}

fn evd_trial(
    cfg: &ExperimentConfig,
    samples: &SampleSet,
    trial_seed: u64,
    init_seed: u64,
    trial_index: u64,
) -> Result<TrialResult> {
    let h = cfg.power.num_components;
    let n = cfg.signal.s_nodes;
    if h > n {
        return Err(Error::Parameter(format!(
            "cannot extract {h} components from {n} nodes"
        )));
    }
    let r_ss = sample_covariance(&samples.s_samples);
    let (true_eigs, _) = hermitian_evd(&r_ss)?;
    let true_top = &true_eigs[..h];

    let mut ledger = CommLedger::default();
    let (sigma_nodes, diagnostics) = match cfg.run.algorithm {
        Algorithm::Centralized => {
            let out = centralized_power_evd(&samples.s_samples, &cfg.power, init_seed)?;
            (out.sigma_sq_nodes, out.diagnostics)
        }
        Algorithm::Sequential | Algorithm::Parallel => {
            let topo = generate_small_world(
                n,
                cfg.graph_s.k,
                cfg.graph_s.p,
                sub_seed(trial_seed, STREAM_GRAPH_S),
            )?;
            let mode = cfg.averaging_mode();
            let run = match cfg.run.algorithm {
                Algorithm::Sequential => sequential_power_evd(
                    &samples.s_samples,
                    &topo,
                    &cfg.power,
                    mode,
                    init_seed,
                    &mut ledger,
                )?,
                _ => parallel_power_evd(
                    &samples.s_samples,
                    &topo,
                    &cfg.power,
                    mode,
                    init_seed,
                    &mut ledger,
                )?,
            };
            (run.sigma_sq(), run.diagnostics)
        }
    };

    let (per_node_nmse, sigma_estimates) = score_rows(true_top, &sigma_nodes)?;
    let nmse = mean(&per_node_nmse);
    Ok(TrialResult {
        trial_index,
        nmse,
        per_node_nmse,
        sigma_estimates,
        ledger,
        diagnostics,
    })
}

fn svd_trial(
    cfg: &ExperimentConfig,
    samples: &SampleSet,
    trial_seed: u64,
    init_seed: u64,
    trial_index: u64,
) -> Result<TrialResult> {
    let h = cfg.power.num_components;
    let (n_s, n_r) = (cfg.signal.s_nodes, cfg.signal.r_nodes);
    if h > n_s.min(n_r) {
        return Err(Error::Parameter(format!(
            "cannot extract {h} components from a {n_s}x{n_r} correlation"
        )));
    }
    let r_sr = sample_cross_correlation(&samples.s_samples, &samples.r_samples)?;
    let (u_all, sigma_all, v_all) = svd(&r_sr);
    let true_u = u_all.slice(s![.., ..h]).to_owned();
    let true_v = v_all.slice(s![.., ..h]).to_owned();
    let true_sigma = &sigma_all[..h];

    let mut ledger = CommLedger::default();
    let (est_u, est_v, sigma_s, sigma_r, diagnostics) = match cfg.run.algorithm {
        Algorithm::Centralized => {
            let out = centralized_power_svd(samples, &cfg.power, init_seed)?;
            (out.u, out.v, out.sigma_sq_s, out.sigma_sq_r, out.diagnostics)
        }
        Algorithm::Sequential | Algorithm::Parallel => {
            let topo_s = generate_small_world(
                n_s,
                cfg.graph_s.k,
                cfg.graph_s.p,
                sub_seed(trial_seed, STREAM_GRAPH_S),
            )?;
            let topo_r = generate_small_world(
                n_r,
                cfg.graph_r.k,
                cfg.graph_r.p,
                sub_seed(trial_seed, STREAM_GRAPH_R),
            )?;
            let bridge = BridgeMap::round_robin(n_s, n_r)?;
            let mode = cfg.averaging_mode();
            let run = match cfg.run.algorithm {
                Algorithm::Sequential => sequential_power_svd(
                    samples,
                    &topo_s,
                    &topo_r,
                    &bridge,
                    &cfg.power,
                    mode,
                    init_seed,
                    &mut ledger,
                )?,
                _ => parallel_power_svd(
                    samples,
                    &topo_s,
                    &topo_r,
                    &bridge,
                    &cfg.power,
                    mode,
                    init_seed,
                    &mut ledger,
                )?,
            };
            (
                run.u_entries(),
                run.v_entries(),
                run.sigma_sq_s(),
                run.sigma_sq_r(),
                run.diagnostics,
            )
        }
    };

    let nmse = nmse_svd(&true_u, &true_v, &est_u, &est_v)?;
    let (mut per_node_nmse, mut sigma_estimates) = score_rows(true_sigma, &sigma_s)?;
    let (nmse_r, sig_r) = score_rows(true_sigma, &sigma_r)?;
    per_node_nmse.extend(nmse_r);
    sigma_estimates.extend(sig_r);
    Ok(TrialResult {
        trial_index,
        nmse,
        per_node_nmse,
        sigma_estimates,
        ledger,
        diagnostics,
    })
}

/// Per-node NMSE of each row's real parts against the true values, plus
/// the raw complex rows.
fn score_rows(truth: &[f64], rows: &CMatrix) -> Result<(Vec<f64>, Vec<Vec<Complex64>>)> {
    let mut nmses = Vec::with_capacity(rows.nrows());
    let mut kept = Vec::with_capacity(rows.nrows());
    for row in rows.rows() {
        let est: Vec<f64> = row.iter().map(|z| z.re).collect();
        nmses.push(nmse_evd(truth, &est)?);
        kept.push(row.to_vec());
    }
    Ok((nmses, kept))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Axis a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    GossipRounds,
    Components,
    PowerIters,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::GossipRounds => "k",
            SweepAxis::Components => "h",
            SweepAxis::PowerIters => "iters",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(SweepAxis::GossipRounds),
            "h" => Ok(SweepAxis::Components),
            "iters" => Ok(SweepAxis::PowerIters),
            other => Err(Error::Parameter(format!(
                "unknown sweep axis {other:?}, expected k, h, or iters"
            ))),
        }
    }
}

/// Default gossip-round grid used when a sweep gives no axis values.
pub const DEFAULT_GOSSIP_GRID: [u64; 4] = [10, 40, 100, 200];

/// One aggregated sweep cell.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub axis_value: u64,
    pub algorithm: Algorithm,
    pub mean_nmse: f64,
    pub trials: u64,
    pub mean_gossip_rounds: f64,
}

/// Aggregated sweep output over both distributed algorithms.
#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub cells: Vec<SweepCell>,
}

/// Sweeps the axis over `values`, running both distributed algorithms at
/// every point. Per-trial seeds depend only on (base_seed, trial_index),
/// so all cells share common random numbers and differ only through the
/// algorithm and the axis value.
pub fn run_sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[u64]) -> Result<SweepResult> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(Error::Parameter(
            "sweep needs at least one axis value".into(),
        ));
    }
    if axis == SweepAxis::GossipRounds && cfg.run.averaging != Averaging::Gossip {
        return Err(Error::Parameter(
            "a gossip-round sweep needs averaging = \"gossip\"".into(),
        ));
    }
    let mut cells = Vec::new();
    for &value in values {
        for algorithm in [Algorithm::Sequential, Algorithm::Parallel] {
            let mut point = cfg.clone();
            point.run.algorithm = algorithm;
            apply_axis(&mut point, axis, value)?;
            let results: Vec<TrialResult> = (0..point.run.trials)
                .into_par_iter()
                .map(|t| run_trial(&point, t))
                .collect::<Result<_>>()?;
            let mean_nmse = results.iter().map(|r| r.nmse).sum::<f64>() / results.len() as f64;
            let mean_gossip_rounds = results
                .iter()
                .map(|r| r.ledger.gossip_rounds as f64)
                .sum::<f64>()
                / results.len() as f64;
            cells.push(SweepCell {
                axis_value: value,
                algorithm,
                mean_nmse,
                trials: point.run.trials,
                mean_gossip_rounds,
            });
        }
    }
    Ok(SweepResult { axis, cells })
}

fn apply_axis(cfg: &mut ExperimentConfig, axis: SweepAxis, value: u64) -> Result<()> {
    match axis {
        SweepAxis::GossipRounds => {
            cfg.gossip.k1 = value;
            cfg.gossip.k2 = value;
        }
        SweepAxis::Components => cfg.power.num_components = axis_usize(value)?,
        SweepAxis::PowerIters => cfg.power.power_iters = axis_usize(value)?,
    }
    Ok(())
}

fn axis_usize(value: u64) -> Result<usize> {
    usize::try_from(value)
        .map_err(|_| Error::Parameter(format!("axis value {value} does not fit a usize")))
}

/// Renders the fixed-header CSV. The pipeline is deterministic per
/// base_seed and f64 Display round-trips exactly, so reruns are
/// byte-identical.
pub fn emit_csv(result: &SweepResult) -> String {
    let mut out = String::from("axis_value,algorithm,mean_nmse,trials,mean_gossip_rounds\n");
    for cell in &result.cells {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            cell.axis_value, cell.algorithm, cell.mean_nmse, cell.trials, cell.mean_gossip_rounds
        ));
    }
    out
}
