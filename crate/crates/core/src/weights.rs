//! Consensus weight matrices: the best-constant rule from the graph
//! Laplacian and spectral-gap validation.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_evd, CMatrix};
use crate::topology::Topology;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Symmetric doubly-stochastic weight matrix tied to a topology.
#[derive(Debug, Clone)]
pub struct ConsensusWeights {
    matrix: Array2<f64>,
    /// Per-row `(column, weight)` support including the diagonal, used for
    /// sparse state updates.
    rows: Vec<Vec<(usize, f64)>>,
    edge_count: usize,
}

impl ConsensusWeights {
    /// Validates structure against the topology: symmetry, unit row and
    /// column sums, and sparsity confined to edges plus the diagonal.
    /// Mixing (spectral gap below 1) is checked separately by `validate`.
    pub fn from_matrix(matrix: Array2<f64>, topology: &Topology) -> Result<Self> {
        let n = topology.node_count();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::Parameter(format!(
                "weight matrix is {}x{} but the topology has {n} nodes",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (matrix[[i, j]] - matrix[[j, i]]).abs() > STOCHASTIC_TOL {
                    return Err(Error::Parameter(format!(
                        "weight matrix is not symmetric at ({i}, {j})"
                    )));
                }
                if matrix[[i, j]] != 0.0 && !topology.has_edge(i, j) {
                    return Err(Error::Parameter(format!(
                        "nonzero weight on non-edge ({i}, {j})"
                    )));
                }
            }
        }
        for i in 0..n {
            let row_sum: f64 = matrix.row(i).sum();
            let col_sum: f64 = matrix.column(i).sum();
            if (row_sum - 1.0).abs() > STOCHASTIC_TOL || (col_sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Parameter(format!(
                    "row/column {i} of the weight matrix does not sum to 1"
                )));
            }
        }
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| matrix[[i, j]] != 0.0)
                    .map(|j| (j, matrix[[i, j]]))
                    .collect()
            })
            .collect();
        Ok(ConsensusWeights {
            matrix,
            rows,
            edge_count: topology.edge_count(),
        })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn node_count(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Sparse support of row `i` as `(column, weight)` pairs.
    pub fn row_support(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// Largest eigenvalue modulus of W on the subspace orthogonal to the
    /// all-ones vector, i.e. of W - J/n.
    pub fn spectral_gap(&self) -> f64 {
        let n = self.node_count();
        let correction = 1.0 / n as f64;
        let shifted: CMatrix = CMatrix::from_shape_fn((n, n), |(i, j)| {
            Complex64::new(self.matrix[[i, j]] - correction, 0.0)
        });
        let (eigs, _) = hermitian_evd(&shifted).expect("W - J/n is symmetric by construction");
        eigs.iter().fold(0.0f64, |acc, &l| acc.max(l.abs()))
    }

    /// Errors unless the weights actually mix (spectral gap strictly
    /// below 1).
    pub fn validate(&self) -> Result<()> {
        let gap = self.spectral_gap();
        if gap >= 1.0 {
            return Err(Error::Parameter(format!(
                "weight matrix does not mix: spectral gap {gap} >= 1"
            )));
        }
        Ok(())
    }
}

/// Best-constant weights W = I - cL with c = 2 / (lmax(L) + lmin_nonzero(L)).
pub fn best_constant_weights(topology: &Topology) -> Result<ConsensusWeights> {
    let n = topology.node_count();
    let l = topology.laplacian();
    let lc: CMatrix = CMatrix::from_shape_fn((n, n), |(i, j)| Complex64::new(l[[i, j]], 0.0));
    let (eigs, _) = hermitian_evd(&lc)?;
    let lambda_max = eigs[0];
    // Smallest nonzero eigenvalue, found explicitly rather than by index.
    let zero_tol = 1e-9 * lambda_max.max(1.0);
    let lambda_second_min = eigs
        .iter()
        .rev()
        .find(|&&v| v > zero_tol)
        .copied()
        .ok_or_else(|| {
            Error::Numeric("Laplacian has no nonzero eigenvalue; graph cannot mix".into())
        })?;
    let denom = lambda_max + lambda_second_min;
    if denom <= 0.0 {
        return Err(Error::Numeric(format!(
            "degenerate Laplacian spectrum: lmax + lmin_nonzero = {denom}"
        )));
    }
    let c = 2.0 / denom;
    let mut w = Array2::<f64>::eye(n);
    w.scaled_add(-c, &l);
    let weights = ConsensusWeights::from_matrix(w, topology)?;
    weights.validate()?;
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::generate_small_world;
    use proptest::prelude::*;

    fn path3() -> Topology {
        Topology::new(3, [(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn path3_best_constant() {
        // Path Laplacian eigenvalues are {0, 1, 3}, so c = 2/(3+1) = 0.5.
        let w = best_constant_weights(&path3()).unwrap();
        let expect = [[0.5, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((w.matrix()[[i, j]] - expect[i][j]).abs() < 1e-12);
            }
        }
        assert!((w.spectral_gap() - 0.5).abs() < 1e-10);
    }

    #[test]
    fn complete_graph_collapses_to_uniform() {
        // K_n Laplacian is nI - J with eigenvalues {0, n}, so c = 1/n and
        // W = J/n.
        for n in [2usize, 3, 5, 8] {
            let mut edges = Vec::new();
            for a in 0..n {
                for b in (a + 1)..n {
                    edges.push((a, b));
                }
            }
            let t = Topology::new(n, edges).unwrap();
            let w = best_constant_weights(&t).unwrap();
            let uniform = 1.0 / n as f64;
            for v in w.matrix().iter() {
                assert!((v - uniform).abs() < 1e-12);
            }
            assert!(w.spectral_gap() < 1e-10);
        }
    }

    #[test]
    fn identity_weights_are_flagged() {
        let t = path3();
        let w = ConsensusWeights::from_matrix(Array2::eye(3), &t).unwrap();
        assert!(w.spectral_gap() >= 1.0 - 1e-12);
        assert!(matches!(w.validate(), Err(Error::Parameter(_))));
    }

    #[test]
    fn from_matrix_rejects_structure_violations() {
        let t = path3();
        // Nonzero weight on the missing (0, 2) edge.
        let bad = Array2::from_shape_vec(
            (3, 3),
            vec![0.5, 0.25, 0.25, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5],
        )
        .unwrap();
        assert!(matches!(
            ConsensusWeights::from_matrix(bad, &t),
            Err(Error::Parameter(_))
        ));

        let mut asym = Array2::eye(3);
        asym[[0, 1]] = 0.25;
        assert!(matches!(
            ConsensusWeights::from_matrix(asym, &t),
            Err(Error::Parameter(_))
        ));

        let not_stochastic = Array2::<f64>::zeros((3, 3));
        assert!(matches!(
            ConsensusWeights::from_matrix(not_stochastic, &t),
            Err(Error::Parameter(_))
        ));

        assert!(matches!(
            ConsensusWeights::from_matrix(Array2::eye(4), &t),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn row_support_matches_matrix() {
        let w = best_constant_weights(&path3()).unwrap();
        assert_eq!(w.edge_count(), 2);
        for i in 0..3 {
            let mut dense = [0.0f64; 3];
            for &(j, v) in w.row_support(i) {
                dense[j] += v;
            }
            for j in 0..3 {
                assert_eq!(dense[j], w.matrix()[[i, j]]);
            }
        }
        // Support never reaches beyond the neighborhood plus the diagonal.
        assert!(!w.row_support(0).iter().any(|&(j, _)| j == 2));
        assert!(!w.row_support(2).iter().any(|&(j, _)| j == 0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn best_constant_invariants_on_small_world(
            n in 6usize..20,
            half_k in 1usize..3,
            p in 0.0f64..1.0,
            seed in 0u64..1_000,
        ) {
            let k = 2 * half_k;
            prop_assume!(k < n);
            let t = generate_small_world(n, k, p, seed).unwrap();
            prop_assert_eq!(t.edge_count(), n * k / 2);
            let w = best_constant_weights(&t).unwrap();
            for i in 0..n {
                let row_sum: f64 = w.matrix().row(i).sum();
                prop_assert!((row_sum - 1.0).abs() < 1e-12);
                for j in 0..n {
                    prop_assert!((w.matrix()[[i, j]] - w.matrix()[[j, i]]).abs() < 1e-14);
                }
            }
            let gap = w.spectral_gap();
            prop_assert!(gap < 1.0);
            prop_assert!(gap >= 0.0);
        }
    }
}
