//! Passive-radar synthetic data: low-rank source signals through random
//! channels plus circular complex Gaussian noise, and the sample
//! covariance/correlation matrices formed from them.

use std::io::{Read as IoRead, Write as IoWrite};

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;

fn default_power() -> f64 {
    1.0
}
fn default_noise() -> f64 {
    1.0
}
fn default_s_nodes() -> usize {
    10
}
fn default_r_nodes() -> usize {
    12
}
fn default_sources() -> usize {
    10
}
fn default_snapshots() -> usize {
    500
}

/// Parameters of the two-set signal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalModelConfig {
    /// Node count of the surveillance set S.
    #[serde(default = "default_s_nodes")]
    pub s_nodes: usize,
    /// Node count of the reference set R.
    #[serde(default = "default_r_nodes")]
    pub r_nodes: usize,
    /// Source count seen by S.
    #[serde(default = "default_sources")]
    pub s_sources: usize,
    /// Source count seen by R.
    #[serde(default = "default_sources")]
    pub r_sources: usize,
    /// Source power for S (covariance of theta_s is this times identity).
    #[serde(default = "default_power")]
    pub source_power_s: f64,
    /// Source power for R.
    #[serde(default = "default_power")]
    pub source_power_r: f64,
    /// Snapshot count T.
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    /// When set, R observes the same per-snapshot source vector as S, so the
    /// cross-correlation is nontrivial. Requires equal source counts; the
    /// shared sources carry `source_power_s`.
    #[serde(default)]
    pub shared_sources: bool,
    /// Noise standard-deviation multiplier; 0 gives the noiseless model.
    #[serde(default = "default_noise")]
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SignalModelConfig {
    fn default() -> Self {
        SignalModelConfig {
            s_nodes: 10,
            r_nodes: 12,
            s_sources: 10,
            r_sources: 10,
            source_power_s: 1.0,
            source_power_r: 1.0,
            snapshots: 500,
            shared_sources: false,
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

impl SignalModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s_nodes == 0 || self.r_nodes == 0 {
            return Err(Error::Parameter("node counts must be positive".into()));
        }
        if self.snapshots == 0 {
            return Err(Error::Parameter("snapshot count must be positive".into()));
        }
        if self.source_power_s < 0.0 || self.source_power_r < 0.0 {
            return Err(Error::Parameter("source powers must be nonnegative".into()));
        }
        if self.noise_scale < 0.0 {
            return Err(Error::Parameter("noise scale must be nonnegative".into()));
        }
        if self.shared_sources && self.s_sources != self.r_sources {
            return Err(Error::Parameter(format!(
                "shared sources need equal source counts, got {} vs {}",
                self.s_sources, self.r_sources
            )));
        }
        Ok(())
    }
}

/// Received time series for both sets; row i holds node i's snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub s_samples: CMatrix,
    pub r_samples: CMatrix,
}

/// Standard circular complex Gaussian draw: unit total variance split
/// evenly between real and imaginary parts.
pub fn circular_gaussian(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
    let mut m = CMatrix::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            m[[i, j]] = circular_gaussian(rng);
        }
    }
    m
}

/// Draws channels once, then per snapshot the sources and noise, and mixes
/// them into per-node series. Fully deterministic in the config seed.
pub fn generate_passive_radar(cfg: &SignalModelConfig) -> Result<SampleSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h_s = gaussian_matrix(&mut rng, cfg.s_nodes, cfg.s_sources);
    let h_r = gaussian_matrix(&mut rng, cfg.r_nodes, cfg.r_sources);
    let amp_s = cfg.source_power_s.sqrt();
    let amp_r = cfg.source_power_r.sqrt();

    let t_count = cfg.snapshots;
    let mut s_samples = CMatrix::zeros((cfg.s_nodes, t_count));
    let mut r_samples = CMatrix::zeros((cfg.r_nodes, t_count));
    let mut theta_s = vec![Complex64::new(0.0, 0.0); cfg.s_sources];
    let mut theta_r = vec![Complex64::new(0.0, 0.0); cfg.r_sources];
    for t in 0..t_count {
        for v in theta_s.iter_mut() {
            *v = circular_gaussian(&mut rng) * amp_s;
        }
        if cfg.shared_sources {
            theta_r.copy_from_slice(&theta_s);
        } else {
            for v in theta_r.iter_mut() {
                *v = circular_gaussian(&mut rng) * amp_r;
            }
        }
        for i in 0..cfg.s_nodes {
            let mixed: Complex64 = (0..cfg.s_sources).map(|w| h_s[[i, w]] * theta_s[w]).sum();
            s_samples[[i, t]] = mixed + circular_gaussian(&mut rng) * cfg.noise_scale;
        }
        for i in 0..cfg.r_nodes {
            let mixed: Complex64 = (0..cfg.r_sources).map(|w| h_r[[i, w]] * theta_r[w]).sum();
            r_samples[[i, t]] = mixed + circular_gaussian(&mut rng) * cfg.noise_scale;
        }
    }
    Ok(SampleSet {
        s_samples,
        r_samples,
    })
}

/// Sample covariance (1/T) sum_t x(t) x(t)^H. The lower triangle mirrors
/// the upper so the result is Hermitian to the last bit.
pub fn sample_covariance(x: &CMatrix) -> CMatrix {
    let (n, t_count) = (x.nrows(), x.ncols());
    let scale = 1.0 / t_count as f64;
    let mut cov = CMatrix::zeros((n, n));
    for i in 0..n {
        let diag: f64 = x.row(i).iter().map(|z| z.norm_sqr()).sum();
        cov[[i, i]] = Complex64::new(diag * scale, 0.0);
        for j in (i + 1)..n {
            let sum: Complex64 = x
                .row(i)
                .iter()
                .zip(x.row(j).iter())
                .map(|(a, b)| a * b.conj())
                .sum();
            cov[[i, j]] = sum * scale;
            cov[[j, i]] = cov[[i, j]].conj();
        }
    }
    cov
}

/// Sample cross-correlation (1/T) sum_t s(t) r(t)^H.
pub fn sample_cross_correlation(s: &CMatrix, r: &CMatrix) -> Result<CMatrix> {
    if s.ncols() != r.ncols() {
        return Err(Error::Parameter(format!(
            "snapshot counts differ: {} vs {}",
            s.ncols(),
            r.ncols()
        )));
    }
    let scale = 1.0 / s.ncols() as f64;
    let mut out = CMatrix::zeros((s.nrows(), r.nrows()));
    for i in 0..s.nrows() {
        for j in 0..r.nrows() {
            let sum: Complex64 = s
                .row(i)
                .iter()
                .zip(r.row(j).iter())
                .map(|(a, b)| a * b.conj())
                .sum();
            out[[i, j]] = sum * scale;
        }
    }
    Ok(out)
}

/// Writes a complex matrix as a 16-byte header (rows, cols as little-endian
/// u64) followed by row-major interleaved re/im f64 pairs.
pub fn write_matrix_binary(w: &mut impl IoWrite, m: &CMatrix) -> Result<()> {
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for z in m.iter() {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

/// Reads the `write_matrix_binary` format back.
pub fn read_matrix_binary(r: &mut impl IoRead) -> Result<CMatrix> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    let rows = u64::from_le_bytes(header[0..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let mut data = Vec::with_capacity(rows * cols);
    let mut buf = [0u8; 16];
    for _ in 0..rows * cols {
        r.read_exact(&mut buf)?;
        let re = f64::from_le_bytes(buf[0..8].try_into().unwrap());
        let im = f64::from_le_bytes(buf[8..16].try_into().unwrap());
        data.push(Complex64::new(re, im));
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::Parameter(format!("matrix file shape error: {e}")))
}
