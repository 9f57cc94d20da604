//! Dense complex linear algebra: inner products and Jacobi-based EVD/SVD
//! factorizations used as ground truth throughout the crate.
//!
//! The decompositions are written for the small matrices this crate works
//! with (a few dozen rows at most), favoring robustness and zero external
//! numerical dependencies over speed.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CVector = Array1<Complex64>;
pub type CMatrix = Array2<Complex64>;

/// Off-diagonal reduction target relative to the Frobenius norm.
const JACOBI_TOL: f64 = 1e-13;
const MAX_SWEEPS: usize = 64;

/// Inner product `a^H b` (conjugate-linear in the first argument).
pub fn inner(a: &CVector, b: &CVector) -> Result<Complex64> {
    if a.len() != b.len() {
        return Err(Error::Parameter(format!(
            "inner product length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum())
}

pub fn vector_norm(a: &CVector) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn frobenius_norm(m: &CMatrix) -> f64 {
    m.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn all_finite(m: &CMatrix) -> bool {
    m.iter().all(|x| x.re.is_finite() && x.im.is_finite())
}

/// Max-magnitude deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let d = (m[[i, j]] - m[[j, i]].conj()).norm();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Multiply a column by the unit phase that makes its largest-magnitude
/// entry real positive. Returns the applied phase factor.
fn fix_column_phase(col: &mut ndarray::ArrayViewMut1<Complex64>) -> Complex64 {
    let mut best = 0usize;
    let mut best_mag = -1.0f64;
    for (i, z) in col.iter().enumerate() {
        let mag = z.norm();
        if mag > best_mag {
            best_mag = mag;
            best = i;
        }
    }
    if best_mag <= 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    let phase = col[best] / Complex64::new(best_mag, 0.0);
    let rot = phase.conj();
    for z in col.iter_mut() {
        *z *= rot;
    }
    rot
}

/// Complex Jacobi rotation parameters (c real, s real, phase e^{i phi})
/// that diagonalize the Hermitian 2x2 block [[app, apq], [conj(apq), aqq]].
fn jacobi_rotation(app: f64, aqq: f64, apq: Complex64) -> (f64, f64, Complex64) {
    let mag = apq.norm();
    let phase = if mag > 0.0 {
        apq / Complex64::new(mag, 0.0)
    } else {
        Complex64::new(1.0, 0.0)
    };
    // Real symmetric Jacobi on [[app, |apq|], [|apq|, aqq]].
    let tau = (aqq - app) / (2.0 * mag);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    (c, s, phase)
}

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi sweeps.
///
/// Returns eigenvalues in descending order and the matching unitary
/// eigenvector columns, each rotated so its largest-magnitude entry is
/// real positive. Satisfies `m v = lambda v` to a residual of roughly
/// machine precision times the matrix norm.
pub fn hermitian_evd(m: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Parameter(format!(
            "hermitian_evd needs a square matrix, got {}x{}",
            n,
            m.ncols()
        )));
    }
    let scale = frobenius_norm(m).max(1.0);
    if hermitian_defect(m) > 1e-10 * scale {
        return Err(Error::Parameter(
            "hermitian_evd input is not Hermitian within 1e-10".into(),
        ));
    }
    if n == 0 {
        return Ok((Vec::new(), CMatrix::zeros((0, 0))));
    }

    // Symmetrize exactly so rounding in the caller cannot bias the sweeps.
    let mut a = CMatrix::zeros((n, n));
    for i in 0..n {
        a[[i, i]] = Complex64::new(m[[i, i]].re, 0.0);
        for j in (i + 1)..n {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]].conj());
            a[[i, j]] = avg;
            a[[j, i]] = avg.conj();
        }
    }
    let mut v = CMatrix::eye(n);
    let norm = frobenius_norm(&a).max(f64::MIN_POSITIVE);

    for _sweep in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]].norm_sqr();
            }
        }
        if (2.0 * off).sqrt() <= JACOBI_TOL * norm {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.norm() <= f64::MIN_POSITIVE {
                    continue;
                }
                let (c, s, phase) = jacobi_rotation(a[[p, p]].re, a[[q, q]].re, apq);
                let sp = s * phase.conj();
                // Column update: A <- A J with J_pp=c, J_pq=s, J_qp=-s e^{-i phi}, J_qq=c e^{-i phi}.
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - sp * akq;
                    a[[k, q]] = s * akp + c * phase.conj() * akq;
                }
                // Row update: A <- J^H A.
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * phase * aqk;
                    a[[q, k]] = s * apk + c * phase * aqk;
                }
                // Eigenvector accumulation: V <- V J.
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - sp * vkq;
                    v[[k, q]] = s * vkp + c * phase.conj() * vkq;
                }
                a[[p, q]] = Complex64::new(0.0, 0.0);
                a[[q, p]] = Complex64::new(0.0, 0.0);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[[j, j]]
            .re
            .partial_cmp(&a[[i, i]].re)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[[i, i]].re).collect();
    let mut vectors = CMatrix::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        let mut col = vectors.column_mut(dst);
        col.assign(&v.column(src));
        fix_column_phase(&mut col);
    }
    Ok((eigenvalues, vectors))
}

/// Thin singular value decomposition `m = U diag(sigma) V^H` by one-sided
/// Jacobi orthogonalization.
///
/// `U` is rows x k and `V` is cols x k with `k = min(rows, cols)`; both have
/// orthonormal columns and `sigma` is nonnegative, descending. Column phases
/// are fixed so each `U` column's largest-magnitude entry is real positive.
pub fn svd(m: &CMatrix) -> (CMatrix, Vec<f64>, CMatrix) {
    let (rows, cols) = (m.nrows(), m.ncols());
    if rows < cols {
        // Decompose the conjugate transpose and swap the factors.
        let mh = m.t().mapv(|z| z.conj());
        let (u, sigma, v) = svd(&mh);
        return (v, sigma, u);
    }
    let k = cols;
    let mut b = m.clone();
    let mut v = CMatrix::eye(cols);

    if k > 0 {
        for _sweep in 0..MAX_SWEEPS {
            let mut rotated = false;
            for p in 0..cols {
                for q in (p + 1)..cols {
                    let mut app = 0.0f64;
                    let mut aqq = 0.0f64;
                    let mut apq = Complex64::new(0.0, 0.0);
                    for r in 0..rows {
                        let bp = b[[r, p]];
                        let bq = b[[r, q]];
                        app += bp.norm_sqr();
                        aqq += bq.norm_sqr();
                        apq += bp.conj() * bq;
                    }
                    if apq.norm() <= 1e-15 * (app * aqq).sqrt() || apq.norm() == 0.0 {
                        continue;
                    }
                    rotated = true;
                    let (c, s, phase) = jacobi_rotation(app, aqq, apq);
                    let sp = s * phase.conj();
                    let cp = c * phase.conj();
                    for r in 0..rows {
                        let bp = b[[r, p]];
                        let bq = b[[r, q]];
                        b[[r, p]] = c * bp - sp * bq;
                        b[[r, q]] = s * bp + cp * bq;
                    }
                    for r in 0..cols {
                        let vp = v[[r, p]];
                        let vq = v[[r, q]];
                        v[[r, p]] = c * vp - sp * vq;
                        v[[r, q]] = s * vp + cp * vq;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
    }

    let mut norms: Vec<f64> = (0..cols)
        .map(|j| b.column(j).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal));
    norms = order.iter().map(|&i| norms[i]).collect();

    let mut u = CMatrix::zeros((rows, k));
    let mut v_sorted = CMatrix::zeros((cols, k));
    let tiny = frobenius_norm(m).max(1.0) * 1e-300;
    for (dst, &src) in order.iter().enumerate() {
        v_sorted.column_mut(dst).assign(&v.column(src));
        if norms[dst] > tiny {
            let scale = Complex64::new(1.0 / norms[dst], 0.0);
            for r in 0..rows {
                u[[r, dst]] = b[[r, src]] * scale;
            }
        }
    }
    complete_null_columns(&mut u, &norms, tiny);

    // Phase convention: rotate each (u, v) pair jointly so U's largest entry
    // is real positive; this leaves U sigma V^H unchanged.
    for j in 0..k {
        let rot = fix_column_phase(&mut u.column_mut(j));
        if norms[j] > tiny {
            for r in 0..cols {
                v_sorted[[r, j]] *= rot;
            }
        } else {
            fix_column_phase(&mut v_sorted.column_mut(j));
        }
    }
    (u, norms, v_sorted)
}

/// Fill columns whose singular value is numerically zero with an
/// orthonormal completion of the existing columns.
fn complete_null_columns(u: &mut CMatrix, norms: &[f64], tiny: f64) {
    let (rows, k) = (u.nrows(), u.ncols());
    for j in 0..k {
        if norms[j] > tiny {
            continue;
        }
        let mut best: Option<CVector> = None;
        let mut best_norm = 0.0f64;
        for e in 0..rows {
            let mut cand = CVector::zeros(rows);
            cand[e] = Complex64::new(1.0, 0.0);
            for jj in 0..k {
                if jj == j || (norms[jj] <= tiny && jj > j) {
                    continue;
                }
                let col = u.column(jj).to_owned();
                let proj: Complex64 =
                    col.iter().zip(cand.iter()).map(|(a, b)| a.conj() * b).sum();
                for r in 0..rows {
                    cand[r] -= proj * col[r];
                }
            }
            let norm = vector_norm(&cand);
            if norm > best_norm {
                best_norm = norm;
                best = Some(cand);
            }
        }
        if let Some(cand) = best {
            if best_norm > 0.0 {
                for r in 0..rows {
                    u[[r, j]] = cand[r] / Complex64::new(best_norm, 0.0);
                }
            }
        }
    }
}

/// Largest principal angle (radians) between the column spans of two
/// matrices with orthonormal columns and equal column count.
pub fn principal_angle(a: &CMatrix, b: &CMatrix) -> Result<f64> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(Error::Parameter(format!(
            "principal_angle shape mismatch: {}x{} vs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let k = a.ncols();
    if k == 0 {
        return Ok(0.0);
    }
    let mut g = CMatrix::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            g[[i, j]] = a
                .column(i)
                .iter()
                .zip(b.column(j).iter())
                .map(|(x, y)| x.conj() * y)
                .sum();
        }
    }
    let (_, sigma, _) = svd(&g);
    let smallest = sigma.last().copied().unwrap_or(0.0).clamp(0.0, 1.0);
    Ok(smallest.acos())
}
