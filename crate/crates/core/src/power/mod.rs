//! Power-method EVD/SVD: configuration, shared initialization draws, guard
//! policies, and output shapes for the centralized reference and the
//! distributed algorithms.

pub mod centralized;
pub mod distributed;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector};
use crate::signal::circular_gaussian;
use crate::topology::Topology;

pub use centralized::{
    centralized_power_evd, centralized_power_svd, spectrum_well_separated, CentralizedEvd,
    CentralizedSvd,
};
pub use distributed::{
    cross_set_relay, parallel_power_evd, parallel_power_svd, sequential_power_evd,
    sequential_power_svd, DistributedEvdRun, DistributedSvdRun, RelayDirection,
};

/// Relative denominator magnitude below which a per-node sigma estimate is
/// replaced by a neighbor's. Scaled by the largest denominator in the batch
/// so the guard tracks the iterate's scale; parallel-mode iterates shrink
/// geometrically and an absolute cutoff would eventually flag every node.
pub(crate) const SIGMA_DENOM_GUARD: f64 = 1e-8;

fn default_shift() -> f64 {
    0.1
}
fn default_power_iters() -> usize {
    20
}
fn default_components() -> usize {
    3
}

/// Power-iteration parameters shared by every algorithm variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerConfig {
    /// Shift alpha in (0, 1) keeping the iteration matrix positive definite.
    #[serde(default = "default_shift")]
    pub shift: f64,
    /// Power iterations l* before the final normalization.
    #[serde(default = "default_power_iters")]
    pub power_iters: usize,
    /// Components H to extract.
    #[serde(default = "default_components")]
    pub num_components: usize,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            shift: default_shift(),
            power_iters: default_power_iters(),
            num_components: default_components(),
        }
    }
}

impl PowerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.shift > 0.0 && self.shift < 1.0) {
            return Err(Error::Parameter(format!(
                "shift must lie in (0, 1), got {}",
                self.shift
            )));
        }
        if self.power_iters == 0 {
            return Err(Error::Parameter("power_iters must be at least 1".into()));
        }
        if self.num_components == 0 {
            return Err(Error::Parameter("num_components must be at least 1".into()));
        }
        Ok(())
    }
}

/// How AC terms are produced: K-round gossip or the exact infinite-round
/// oracle. `k1` drives set S (the only set in EVD runs), `k2` set R.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AveragingMode {
    Exact,
    Gossip { k1: u64, k2: u64 },
}

impl AveragingMode {
    /// Gossip with the same round count on both sets.
    pub fn gossip(k: u64) -> Self {
        AveragingMode::Gossip { k1: k, k2: k }
    }

    pub fn validate(&self) -> Result<()> {
        if let AveragingMode::Gossip { k1, k2 } = self {
            if *k1 == 0 || *k2 == 0 {
                return Err(Error::Parameter(
                    "gossip round counts must be at least 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Gateway pairing between the two node sets: every node has exactly one
/// counterpart in the other set that forwards consensus results to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BridgeMap {
    s_to_r: Vec<usize>,
    r_to_s: Vec<usize>,
}

impl BridgeMap {
    pub fn new(
        s_to_r: Vec<usize>,
        r_to_s: Vec<usize>,
        s_count: usize,
        r_count: usize,
    ) -> Result<Self> {
        if s_to_r.len() != s_count {
            return Err(Error::Parameter(format!(
                "bridge covers {} of {} S-nodes",
                s_to_r.len(),
                s_count
            )));
        }
        if r_to_s.len() != r_count {
            return Err(Error::Parameter(format!(
                "bridge covers {} of {} R-nodes",
                r_to_s.len(),
                r_count
            )));
        }
        if let Some(bad) = s_to_r.iter().find(|&&g| g >= r_count) {
            return Err(Error::Parameter(format!(
                "S-side gateway {bad} out of range for {r_count} R-nodes"
            )));
        }
        if let Some(bad) = r_to_s.iter().find(|&&g| g >= s_count) {
            return Err(Error::Parameter(format!(
                "R-side gateway {bad} out of range for {s_count} S-nodes"
            )));
        }
        Ok(BridgeMap { s_to_r, r_to_s })
    }

    /// Deterministic default pairing: node i talks to node i modulo the
    /// other set's size.
    pub fn round_robin(s_count: usize, r_count: usize) -> Result<Self> {
        if s_count == 0 || r_count == 0 {
            return Err(Error::Parameter("bridge needs nonempty node sets".into()));
        }
        BridgeMap::new(
            (0..s_count).map(|i| i % r_count).collect(),
            (0..r_count).map(|j| j % s_count).collect(),
            s_count,
            r_count,
        )
    }

    pub fn gateway_in_r(&self, s_node: usize) -> usize {
        self.s_to_r[s_node]
    }

    pub fn gateway_in_s(&self, r_node: usize) -> usize {
        self.r_to_s[r_node]
    }

    pub fn s_count(&self) -> usize {
        self.s_to_r.len()
    }

    pub fn r_count(&self) -> usize {
        self.r_to_s.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SetTag {
    S,
    R,
}

/// One node's slice of a finished distributed run.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub node_id: usize,
    pub set_tag: SetTag,
    /// The node's own T received samples.
    pub local_samples: CVector,
    /// Entries of the normalized eigenvector estimates, one per component.
    pub vec_entries: CVector,
    /// Node-local sigma-squared estimates, complex in finite-K runs.
    pub sigma_sq: CVector,
}

/// Guard and conditioning counters accumulated over one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PowerDiagnostics {
    /// Sigma estimates replaced because the denominator entry magnitude
    /// fell below the guard threshold.
    pub guarded_sigma_estimates: u64,
    /// Norm estimates replaced because a consensus norm was not positive.
    pub guarded_norms: u64,
    /// Largest |Im| seen across per-node sigma-squared estimates.
    pub max_sigma_imag: f64,
}

impl PowerDiagnostics {
    pub fn absorb(&mut self, other: &PowerDiagnostics) {
        self.guarded_sigma_estimates += other.guarded_sigma_estimates;
        self.guarded_norms += other.guarded_norms;
        self.max_sigma_imag = self.max_sigma_imag.max(other.max_sigma_imag);
    }

    pub(crate) fn note_sigma(&mut self, estimate: Complex64) {
        let imag = estimate.im.abs();
        if imag > self.max_sigma_imag {
            self.max_sigma_imag = imag;
        }
    }
}

/// Draws the independent CN(0, I) starting vectors shared by every
/// algorithm: for each component, first the S-side vector, then the R-side
/// one. EVD callers pass `r_nodes = 0` and ignore the second list.
pub fn draw_initial_vectors(
    seed: u64,
    s_nodes: usize,
    r_nodes: usize,
    components: usize,
) -> (Vec<CVector>, Vec<CVector>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut us = Vec::with_capacity(components);
    let mut vs = Vec::with_capacity(components);
    for _ in 0..components {
        us.push(CVector::from_shape_fn(s_nodes, |_| {
            circular_gaussian(&mut rng)
        }));
        vs.push(CVector::from_shape_fn(r_nodes, |_| {
            circular_gaussian(&mut rng)
        }));
    }
    (us, vs)
}

/// Per-node division with the guard policy: entries whose denominator
/// magnitude is below the threshold take the estimate of the
/// highest-denominator neighbor (all nodes when no topology applies),
/// falling back to the global best, then to zero.
pub(crate) fn guarded_divide(
    numerators: &[Complex64],
    denominators: &[Complex64],
    topology: Option<&Topology>,
    diag: &mut PowerDiagnostics,
) -> Vec<Complex64> {
    let n = numerators.len();
    debug_assert_eq!(n, denominators.len());
    let scale = denominators.iter().map(|d| d.norm()).fold(0.0, f64::max);
    let threshold = SIGMA_DENOM_GUARD * scale;
    let raw: Vec<Option<Complex64>> = (0..n)
        .map(|i| {
            let mag = denominators[i].norm();
            (scale > 0.0 && mag >= threshold).then(|| numerators[i] / denominators[i])
        })
        .collect();
    let global_best = (0..n).max_by(|&a, &b| {
        denominators[a]
            .norm()
            .partial_cmp(&denominators[b].norm())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    (0..n)
        .map(|i| {
            if let Some(v) = raw[i] {
                return v;
            }
            diag.guarded_sigma_estimates += 1;
            let neighbor_best = topology.and_then(|t| {
                t.neighbors(i)
                    .iter()
                    .copied()
                    .max_by(|&a, &b| {
                        denominators[a]
                            .norm()
                            .partial_cmp(&denominators[b].norm())
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .and_then(|j| raw[j])
            });
            neighbor_best
                .or_else(|| global_best.and_then(|j| raw[j]))
                .unwrap_or(Complex64::new(0.0, 0.0))
        })
        .collect()
}

/// Square roots of per-node squared-norm estimates with the same
/// substitution policy for non-positive values. Errors when no node holds a
/// usable estimate.
pub(crate) fn guarded_norms(
    norm_sq: &[f64],
    topology: Option<&Topology>,
    diag: &mut PowerDiagnostics,
) -> Result<Vec<f64>> {
    let n = norm_sq.len();
    let usable = |v: f64| v.is_finite() && v > 0.0;
    let global_best = norm_sq
        .iter()
        .copied()
        .filter(|&v| usable(v))
        .fold(None::<f64>, |acc, v| Some(acc.map_or(v, |a| a.max(v))));
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let v = norm_sq[i];
        if usable(v) {
            out.push(v.sqrt());
            continue;
        }
        diag.guarded_norms += 1;
        let neighbor_best = topology.and_then(|t| {
            t.neighbors(i)
                .iter()
                .map(|&j| norm_sq[j])
                .filter(|&w| usable(w))
                .fold(None::<f64>, |acc, w| Some(acc.map_or(w, |a| a.max(w))))
        });
        match neighbor_best.or(global_best) {
            Some(w) => out.push(w.sqrt()),
            None => {
                return Err(Error::Numeric(
                    "no node holds a positive norm estimate; iterate collapsed".into(),
                ))
            }
        }
    }
    Ok(out)
}

pub(crate) fn ensure_finite(label: &str, m: &CMatrix) -> Result<()> {
    if crate::linalg::all_finite(m) {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "{label} produced a non-finite iterate"
        )))
    }
}
