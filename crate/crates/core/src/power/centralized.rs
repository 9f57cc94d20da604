//! Centralized power EVD/SVD reference: the deflated shifted power
//! iteration with exact inner products, structured entry-for-entry like the
//! distributed per-node formulas so exact-averaging runs can be compared
//! node-wise.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector};
use crate::signal::SampleSet;

use super::{draw_initial_vectors, ensure_finite, guarded_divide, PowerConfig, PowerDiagnostics};

/// Centralized SVD estimate: unit-norm singular vector columns plus the
/// per-node sigma estimates the distributed algorithms also produce.
#[derive(Debug, Clone)]
pub struct CentralizedSvd {
    /// |S| x H left vectors, unit columns.
    pub u: CMatrix,
    /// |R| x H right vectors, unit columns.
    pub v: CMatrix,
    /// Headline estimates: mean over S-nodes of the real parts.
    pub sigma_sq: Vec<f64>,
    /// |S| x H per-node estimates from the S-side estimator.
    pub sigma_sq_s: CMatrix,
    /// |R| x H per-node estimates from the R-side estimator.
    pub sigma_sq_r: CMatrix,
    pub diagnostics: PowerDiagnostics,
}

/// Centralized EVD estimate; eigenvalues are the S-side sigma estimates.
#[derive(Debug, Clone)]
pub struct CentralizedEvd {
    /// n x H eigenvector estimates, unit columns.
    pub u: CMatrix,
    /// Headline eigenvalue estimates, mean over nodes of the real parts.
    pub lambda: Vec<f64>,
    /// n x H per-node estimates.
    pub sigma_sq_nodes: CMatrix,
    pub diagnostics: PowerDiagnostics,
}

/// Inner products x(t)^H y for every snapshot column of `samples`.
fn snapshot_inner_products(samples: &CMatrix, y: &CVector) -> Vec<Complex64> {
    let (n, t_count) = (samples.nrows(), samples.ncols());
    let mut out = vec![Complex64::new(0.0, 0.0); t_count];
    for i in 0..n {
        let yi = y[i];
        for (t, v) in out.iter_mut().enumerate() {
            *v += samples[[i, t]].conj() * yi;
        }
    }
    out
}

/// One data-term application: node entries (1/T) sum_t x_i(t) g(t).
fn apply_data_term(samples: &CMatrix, g: &[Complex64]) -> CVector {
    let (n, t_count) = (samples.nrows(), samples.ncols());
    let scale = 1.0 / t_count as f64;
    CVector::from_shape_fn(n, |i| {
        let sum: Complex64 = (0..t_count).map(|t| samples[[i, t]] * g[t]).sum();
        sum * scale
    })
}

fn vector_norm(v: &CVector) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Per-node sigma estimates for one finished component: numerator
/// (1/T) sum_t x_i(t) g(t) divided by the node's own normalized entry,
/// guard-substituted globally (the centralized view has no neighborhoods).
fn per_node_sigma(
    samples: &CMatrix,
    g: &[Complex64],
    normalized_entries: &CVector,
    diag: &mut PowerDiagnostics,
) -> Vec<Complex64> {
    let numerators = apply_data_term(samples, g);
    let estimates = guarded_divide(
        numerators.as_slice().unwrap(),
        normalized_entries.as_slice().unwrap(),
        None,
        diag,
    );
    for &e in &estimates {
        diag.note_sigma(e);
    }
    estimates
}

/// Centralized shifted power iteration for the top-H singular pairs of the
/// sample cross-correlation, with per-node deflation mirroring the
/// distributed update rules under exact averaging.
pub fn centralized_power_svd(
    samples: &SampleSet,
    cfg: &PowerConfig,
    seed: u64,
) -> Result<CentralizedSvd> {
    cfg.validate()?;
    let (s_nodes, t_count) = samples.s_samples.dim();
    let (r_nodes, t_r) = samples.r_samples.dim();
    if t_count != t_r {
        return Err(Error::Parameter(format!(
            "snapshot counts differ between sets: {t_count} vs {t_r}"
        )));
    }
    if t_count == 0 {
        return Err(Error::Parameter("need at least one snapshot".into()));
    }
    let h_count = cfg.num_components;
    if h_count > s_nodes.min(r_nodes) {
        return Err(Error::Parameter(format!(
            "cannot extract {h_count} components from a {s_nodes}x{r_nodes} correlation"
        )));
    }

    let (init_us, init_vs) = draw_initial_vectors(seed, s_nodes, r_nodes, h_count);
    let mut diag = PowerDiagnostics::default();
    let mut u_out = CMatrix::zeros((s_nodes, h_count));
    let mut v_out = CMatrix::zeros((r_nodes, h_count));
    let mut sigma_s = CMatrix::zeros((s_nodes, h_count));
    let mut sigma_r = CMatrix::zeros((r_nodes, h_count));

    for h in 0..h_count {
        let mut u = init_us[h].clone();
        let mut v = init_vs[h].clone();
        for _ in 0..cfg.power_iters {
            let g_r = snapshot_inner_products(&samples.r_samples, &v);
            let g_s = snapshot_inner_products(&samples.s_samples, &u);
            let mut u_new = apply_data_term(&samples.s_samples, &g_r);
            let mut v_new = apply_data_term(&samples.r_samples, &g_s);
            u_new.scaled_add(Complex64::new(cfg.shift, 0.0), &u);
            v_new.scaled_add(Complex64::new(cfg.shift, 0.0), &v);
            for m in 0..h {
                let um = u_out.column(m);
                let vm = v_out.column(m);
                let defl_v: Complex64 = vm.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
                let defl_u: Complex64 = um.iter().zip(u.iter()).map(|(a, b)| a.conj() * b).sum();
                for i in 0..s_nodes {
                    u_new[i] -= sigma_s[[i, m]].re * um[i] * defl_v;
                }
                for j in 0..r_nodes {
                    v_new[j] -= sigma_r[[j, m]].re * vm[j] * defl_u;
                }
            }
            // Joint rescale: the update is linear in (u, v), so a common
            // positive factor leaves the final directions unchanged while
            // keeping l* = 200 runs inside floating-point range.
            let joint = (u_new.iter().chain(v_new.iter()))
                .map(|z| z.norm_sqr())
                .sum::<f64>()
                .sqrt();
            if joint > 0.0 {
                let inv = Complex64::new(1.0 / joint, 0.0);
                u_new.mapv_inplace(|z| z * inv);
                v_new.mapv_inplace(|z| z * inv);
            }
            u = u_new;
            v = v_new;
        }
        let nu = vector_norm(&u);
        let nv = vector_norm(&v);
        if nu <= 0.0 || nv <= 0.0 {
            return Err(Error::Numeric(format!(
                "component {h} iterate collapsed to zero"
            )));
        }
        let u_hat = u.mapv(|z| z / nu);
        let v_hat = v.mapv(|z| z / nv);
        ensure_finite("centralized SVD", &u_hat.clone().insert_axis(ndarray::Axis(1)))?;

        let g_r = snapshot_inner_products(&samples.r_samples, &v_hat);
        let g_s = snapshot_inner_products(&samples.s_samples, &u_hat);
        let sig_s = per_node_sigma(&samples.s_samples, &g_r, &u_hat, &mut diag);
        let sig_r = per_node_sigma(&samples.r_samples, &g_s, &v_hat, &mut diag);
        for i in 0..s_nodes {
            sigma_s[[i, h]] = sig_s[i];
        }
        for j in 0..r_nodes {
            sigma_r[[j, h]] = sig_r[j];
        }
        u_out.column_mut(h).assign(&u_hat);
        v_out.column_mut(h).assign(&v_hat);
    }

    let sigma_sq = (0..h_count)
        .map(|h| sigma_s.column(h).iter().map(|z| z.re).sum::<f64>() / s_nodes as f64)
        .collect();
    Ok(CentralizedSvd {
        u: u_out,
        v: v_out,
        sigma_sq,
        sigma_sq_s: sigma_s,
        sigma_sq_r: sigma_r,
        diagnostics: diag,
    })
}

/// EVD special case: the SVD machinery with the same set on both sides.
pub fn centralized_power_evd(
    samples: &CMatrix,
    cfg: &PowerConfig,
    seed: u64,
) -> Result<CentralizedEvd> {
    cfg.validate()?;
    let (n, t_count) = samples.dim();
    if t_count == 0 {
        return Err(Error::Parameter("need at least one snapshot".into()));
    }
    let h_count = cfg.num_components;
    if h_count > n {
        return Err(Error::Parameter(format!(
            "cannot extract {h_count} components from {n} nodes"
        )));
    }

    let (init_us, _) = draw_initial_vectors(seed, n, 0, h_count);
    let mut diag = PowerDiagnostics::default();
    let mut u_out = CMatrix::zeros((n, h_count));
    let mut sigma_nodes = CMatrix::zeros((n, h_count));

    for h in 0..h_count {
        let mut u = init_us[h].clone();
        for _ in 0..cfg.power_iters {
            let g = snapshot_inner_products(samples, &u);
            let mut u_new = apply_data_term(samples, &g);
            u_new.scaled_add(Complex64::new(cfg.shift, 0.0), &u);
            for m in 0..h {
                let um = u_out.column(m);
                let defl: Complex64 = um.iter().zip(u.iter()).map(|(a, b)| a.conj() * b).sum();
                for i in 0..n {
                    u_new[i] -= sigma_nodes[[i, m]].re * um[i] * defl;
                }
            }
            let norm = vector_norm(&u_new);
            if norm > 0.0 {
                let inv = Complex64::new(1.0 / norm, 0.0);
                u_new.mapv_inplace(|z| z * inv);
            }
            u = u_new;
        }
        let nu = vector_norm(&u);
        if nu <= 0.0 {
            return Err(Error::Numeric(format!(
                "component {h} iterate collapsed to zero"
            )));
        }
        let u_hat = u.mapv(|z| z / nu);
        ensure_finite("centralized EVD", &u_hat.clone().insert_axis(ndarray::Axis(1)))?;

        let g = snapshot_inner_products(samples, &u_hat);
        let sig = per_node_sigma(samples, &g, &u_hat, &mut diag);
        for i in 0..n {
            sigma_nodes[[i, h]] = sig[i];
        }
        u_out.column_mut(h).assign(&u_hat);
    }

    let lambda = (0..h_count)
        .map(|h| sigma_nodes.column(h).iter().map(|z| z.re).sum::<f64>() / n as f64)
        .collect();
    Ok(CentralizedEvd {
        u: u_out,
        lambda,
        sigma_sq_nodes: sigma_nodes,
        diagnostics: diag,
    })
}

/// True for spectra whose consecutive top-(H+1) ratios all reach the gap
/// threshold, the well-separatedness filter used in oracle comparisons.
pub fn spectrum_well_separated(values: &[f64], h_count: usize, min_ratio: f64) -> bool {
    if values.len() < h_count + 1 {
        return values.len() >= h_count && values.iter().take(h_count).all(|&v| v > 0.0);
    }
    (0..h_count).all(|i| {
        let hi = values[i];
        let lo = values[i + 1].max(0.0);
        hi > 0.0 && hi >= min_ratio * lo && lo >= 0.0 && hi > lo
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermitian_evd, inner, svd};
    use crate::signal::{
        generate_passive_radar, sample_covariance, sample_cross_correlation, SignalModelConfig,
    };

    fn svd_samples(seed: u64) -> SampleSet {
        // Moderate source power keeps the top singular value small enough
        // that the coupled update's slow-decaying (alpha - sigma_1) branch
        // is gone well before l* = 200; see the sigma-oracle test.
        let cfg = SignalModelConfig {
            s_sources: 2,
            r_sources: 2,
            shared_sources: true,
            source_power_s: 0.15,
            source_power_r: 0.15,
            snapshots: 200,
            seed,
            ..Default::default()
        };
        generate_passive_radar(&cfg).unwrap()
    }

    #[test]
    fn rank1_left_vector_matches_oracle() {
        let cfg = SignalModelConfig {
            s_sources: 1,
            r_sources: 1,
            shared_sources: true,
            noise_scale: 0.0,
            snapshots: 100,
            seed: 11,
            ..Default::default()
        };
        let samples = generate_passive_radar(&cfg).unwrap();
        let power = PowerConfig {
            power_iters: 200,
            num_components: 1,
            ..Default::default()
        };
        let out = centralized_power_svd(&samples, &power, 3).unwrap();
        let rsr = sample_cross_correlation(&samples.s_samples, &samples.r_samples).unwrap();
        let (u_oracle, _, _) = svd(&rsr);
        let align = inner(&out.u.column(0).to_owned(), &u_oracle.column(0).to_owned()).unwrap();
        assert!(align.norm() >= 1.0 - 1e-8, "alignment {}", align.norm());
    }

    #[test]
    fn svd_sigma_matches_oracle_on_separated_spectra() {
        let power = PowerConfig {
            power_iters: 200,
            num_components: 2,
            ..Default::default()
        };
        let mut checked = 0;
        for seed in 0..12u64 {
            let samples = svd_samples(seed);
            let rsr = sample_cross_correlation(&samples.s_samples, &samples.r_samples).unwrap();
            let (_, sigma_true, _) = svd(&rsr);
            if !spectrum_well_separated(&sigma_true, 2, 1.1) {
                continue;
            }
            checked += 1;
            let out = centralized_power_svd(&samples, &power, seed.wrapping_add(100)).unwrap();
            for h in 0..2 {
                let rel = (out.sigma_sq[h] - sigma_true[h]).abs() / sigma_true[h];
                assert!(rel <= 1e-6, "seed {seed} component {h}: rel {rel}");
            }
        }
        assert!(checked >= 5, "only {checked} separated spectra in the batch");
    }

    #[test]
    fn rejects_too_many_components() {
        let samples = svd_samples(0);
        let power = PowerConfig {
            num_components: 11,
            ..Default::default()
        };
        assert!(matches!(
            centralized_power_svd(&samples, &power, 0),
            Err(Error::Parameter(_))
        ));
        let evd_power = PowerConfig {
            num_components: 11,
            ..Default::default()
        };
        assert!(matches!(
            centralized_power_evd(&samples.s_samples, &evd_power, 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn evd_lambda_matches_oracle() {
        let power = PowerConfig {
            power_iters: 200,
            num_components: 3,
            ..Default::default()
        };
        let mut checked = 0;
        for seed in 0..10u64 {
            let cfg = SignalModelConfig {
                snapshots: 200,
                seed,
                ..Default::default()
            };
            let samples = generate_passive_radar(&cfg).unwrap();
            let rss = sample_covariance(&samples.s_samples);
            let (eigs, _) = hermitian_evd(&rss).unwrap();
            if !spectrum_well_separated(&eigs, 3, 1.1) {
                continue;
            }
            checked += 1;
            let out = centralized_power_evd(&samples.s_samples, &power, seed ^ 7).unwrap();
            for h in 0..3 {
                let rel = (out.lambda[h] - eigs[h]).abs() / eigs[h];
                assert!(rel <= 1e-6, "seed {seed} component {h}: rel {rel}");
            }
        }
        assert!(checked >= 3, "only {checked} separated spectra in the batch");
    }

    #[test]
    fn rank1_noiseless_evd_exact() {
        let cfg = SignalModelConfig {
            s_sources: 1,
            r_sources: 1,
            noise_scale: 0.0,
            snapshots: 50,
            seed: 3,
            ..Default::default()
        };
        let samples = generate_passive_radar(&cfg).unwrap();
        let rss = sample_covariance(&samples.s_samples);
        let (eigs, _) = hermitian_evd(&rss).unwrap();
        let power = PowerConfig {
            power_iters: 200,
            num_components: 1,
            ..Default::default()
        };
        let out = centralized_power_evd(&samples.s_samples, &power, 5).unwrap();
        assert!((out.lambda[0] - eigs[0]).abs() <= 1e-8 * eigs[0]);
    }

    #[test]
    fn shift_does_not_move_eigenvectors() {
        let cfg = SignalModelConfig {
            snapshots: 200,
            seed: 19,
            ..Default::default()
        };
        let samples = generate_passive_radar(&cfg).unwrap();
        let mut outputs = Vec::new();
        for shift in [0.1, 0.5] {
            let power = PowerConfig {
                shift,
                power_iters: 300,
                num_components: 1,
            };
            outputs.push(centralized_power_evd(&samples.s_samples, &power, 2).unwrap());
        }
        let a = outputs[0].u.column(0).to_owned();
        let b = outputs[1].u.column(0).to_owned();
        let overlap = inner(&a, &b).unwrap();
        let phase = overlap / overlap.norm();
        let diff: f64 = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x * phase - y).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff <= 1e-6, "eigenvector moved by {diff}");
    }

    #[test]
    fn outputs_are_unit_norm_and_deflation_orthogonal() {
        let power = PowerConfig {
            power_iters: 200,
            num_components: 3,
            ..Default::default()
        };
        let cfg = SignalModelConfig {
            snapshots: 300,
            seed: 41,
            ..Default::default()
        };
        let samples = generate_passive_radar(&cfg).unwrap();
        let rss = sample_covariance(&samples.s_samples);
        let (eigs, _) = hermitian_evd(&rss).unwrap();
        if !spectrum_well_separated(&eigs, 3, 1.05) {
            // Fixed seed chosen to pass the filter; fail loudly if it drifts.
            panic!("test data no longer well separated");
        }
        let out = centralized_power_evd(&samples.s_samples, &power, 8).unwrap();
        for h in 0..3 {
            let col = out.u.column(h).to_owned();
            let norm = vector_norm(&col);
            assert!((norm - 1.0).abs() <= 1e-12);
            for m in 0..h {
                let cross = inner(&out.u.column(m).to_owned(), &col).unwrap();
                assert!(cross.norm() <= 1e-6, "components {m},{h}: {}", cross.norm());
            }
        }
    }

    #[test]
    fn successive_iterate_angles_shrink_after_burn_in() {
        let power_base = PowerConfig {
            num_components: 1,
            ..Default::default()
        };
        let mut passes = 0;
        let trials = 100;
        for trial in 0..trials {
            let cfg = SignalModelConfig {
                s_sources: 3,
                r_sources: 3,
                snapshots: 100,
                seed: 1000 + trial,
                ..Default::default()
            };
            let samples = generate_passive_radar(&cfg).unwrap();
            // The normalized output at l* = k is the k-th iterate direction,
            // so successive outputs expose the per-iteration angles.
            let mut dirs = Vec::new();
            for iters in 1..=20 {
                let power = PowerConfig {
                    power_iters: iters,
                    ..power_base
                };
                let out = centralized_power_evd(&samples.s_samples, &power, trial).unwrap();
                dirs.push(out.u.column(0).to_owned());
            }
            let angles: Vec<f64> = dirs
                .windows(2)
                .map(|w| {
                    let overlap = inner(&w[0], &w[1]).unwrap().norm().clamp(0.0, 1.0);
                    overlap.acos()
                })
                .collect();
            let monotone = angles
                .windows(2)
                .skip(4)
                .all(|w| w[1] <= w[0] + 1e-10);
            if monotone {
                passes += 1;
            }
        }
        assert!(passes * 100 >= trials * 95, "only {passes}/{trials} monotone");
    }
}
