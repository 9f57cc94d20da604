//! Synchronous average-consensus gossip over batched complex payloads,
//! with exact communication metering.

use ndarray::Array2;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::weights::ConsensusWeights;

/// Running communication cost counters for one trial.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CommLedger {
    /// Synchronous gossip rounds executed ("shaking-hands").
    pub gossip_rounds: u64,
    /// Complex scalars moved across edges, both directions.
    pub scalars_transmitted: u64,
    /// S-to-R bridge transfers, one per direction per power iteration.
    pub cross_set_exchanges: u64,
}

impl CommLedger {
    pub fn merge(&mut self, other: &CommLedger) {
        self.gossip_rounds += other.gossip_rounds;
        self.scalars_transmitted += other.scalars_transmitted;
        self.cross_set_exchanges += other.cross_set_exchanges;
    }
}

/// One batched consensus run: `payload_width` independent averaging tasks
/// advancing in lockstep under a shared weight matrix.
#[derive(Debug, Clone)]
pub struct GossipSession {
    weights: ConsensusWeights,
    state: CMatrix,
    round: u64,
}

impl GossipSession {
    pub fn new(weights: &ConsensusWeights, initial_values: CMatrix) -> Result<Self> {
        if initial_values.nrows() != weights.node_count() {
            return Err(Error::Parameter(format!(
                "initial state has {} rows but the weight matrix has {} nodes",
                initial_values.nrows(),
                weights.node_count()
            )));
        }
        if initial_values.ncols() == 0 {
            return Err(Error::Parameter("payload width must be at least 1".into()));
        }
        Ok(GossipSession {
            weights: weights.clone(),
            state: initial_values,
            round: 0,
        })
    }

    pub fn state(&self) -> &CMatrix {
        &self.state
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn payload_width(&self) -> usize {
        self.state.ncols()
    }

    /// One synchronous round: state <- W state. Counts one shaking-hand and
    /// `2 |edges| P` transmitted scalars.
    pub fn step_round(&mut self, ledger: &mut CommLedger) {
        let (n, p) = (self.state.nrows(), self.state.ncols());
        let mut next = Array2::<Complex64>::zeros((n, p));
        for i in 0..n {
            for &(j, w) in self.weights.row_support(i) {
                let src = self.state.row(j);
                let mut dst = next.row_mut(i);
                for c in 0..p {
                    dst[c] += w * src[c];
                }
            }
        }
        self.state = next;
        self.round += 1;
        ledger.gossip_rounds += 1;
        ledger.scalars_transmitted += 2 * self.weights.edge_count() as u64 * p as u64;
    }

    /// Runs exactly `k` rounds and returns the resulting state.
    pub fn run_consensus(&mut self, k: u64, ledger: &mut CommLedger) -> CMatrix {
        for _ in 0..k {
            self.step_round(ledger);
        }
        self.state.clone()
    }
}

/// Scales converged per-node averages by the set size `n`, turning the mean
/// of the initial values into each node's estimate of their sum.
pub fn ac_estimate(values: &CMatrix, n: usize) -> CMatrix {
    values.mapv(|z| z * n as f64)
}

/// Replaces every row with the exact column mean. Oracle for the infinite-
/// round limit; touches no ledger.
pub fn exact_average(initial_values: &CMatrix) -> CMatrix {
    let (n, p) = (initial_values.nrows(), initial_values.ncols());
    let mut means = vec![Complex64::new(0.0, 0.0); p];
    for row in initial_values.rows() {
        for (c, z) in row.iter().enumerate() {
            means[c] += z;
        }
    }
    let scale = 1.0 / n as f64;
    Array2::from_shape_fn((n, p), |(_, c)| means[c] * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{generate_small_world, Topology};
    use crate::weights::best_constant_weights;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn k2_weights() -> ConsensusWeights {
        let t = Topology::new(2, [(0, 1)]).unwrap();
        best_constant_weights(&t).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize, p: usize) -> CMatrix {
        CMatrix::from_shape_fn((n, p), |_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
    }

    fn column_means(m: &CMatrix) -> Vec<Complex64> {
        let scale = 1.0 / m.nrows() as f64;
        (0..m.ncols()).map(|j| m.column(j).sum() * scale).collect()
    }

    #[test]
    fn init_copies_state_and_checks_shape() {
        let w = k2_weights();
        let s = GossipSession::new(&w, array![[c(3.0, 0.0)], [c(3.0, 0.0)]]).unwrap();
        assert_eq!(s.round(), 0);
        assert_eq!(s.payload_width(), 1);
        assert_eq!(s.state()[[0, 0]], c(3.0, 0.0));

        assert!(matches!(
            GossipSession::new(&w, CMatrix::zeros((3, 1))),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            GossipSession::new(&w, CMatrix::zeros((2, 0))),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn two_node_average_in_one_step() {
        let w = k2_weights();
        let mut ledger = CommLedger::default();
        let mut s = GossipSession::new(&w, array![[c(2.0, 0.0)], [c(4.0, 0.0)]]).unwrap();
        s.step_round(&mut ledger);
        assert!((s.state()[[0, 0]] - c(3.0, 0.0)).norm() < 1e-15);
        assert!((s.state()[[1, 0]] - c(3.0, 0.0)).norm() < 1e-15);
        assert_eq!(ledger.gossip_rounds, 1);
        assert_eq!(ledger.scalars_transmitted, 2);
    }

    #[test]
    fn path3_single_step() {
        let t = Topology::new(3, [(0, 1), (1, 2)]).unwrap();
        let w = best_constant_weights(&t).unwrap();
        let mut ledger = CommLedger::default();
        let mut s =
            GossipSession::new(&w, array![[c(1.0, 0.0)], [c(0.0, 0.0)], [c(0.0, 0.0)]]).unwrap();
        s.step_round(&mut ledger);
        assert!((s.state()[[0, 0]] - c(0.5, 0.0)).norm() < 1e-15);
        assert!((s.state()[[1, 0]] - c(0.5, 0.0)).norm() < 1e-15);
        assert!(s.state()[[2, 0]].norm() < 1e-15);
    }

    #[test]
    fn zero_rounds_is_identity() {
        let w = k2_weights();
        let init = array![[c(2.0, 1.0)], [c(4.0, -1.0)]];
        let mut ledger = CommLedger::default();
        let mut s = GossipSession::new(&w, init.clone()).unwrap();
        let out = s.run_consensus(0, &mut ledger);
        assert_eq!(out, init);
        assert_eq!(ledger, CommLedger::default());
    }

    #[test]
    fn long_run_reaches_column_means() {
        let t = generate_small_world(10, 4, 0.2, 3).unwrap();
        let w = best_constant_weights(&t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let init = random_state(&mut rng, 10, 7);
        let means = column_means(&init);
        let mut ledger = CommLedger::default();
        let mut s = GossipSession::new(&w, init).unwrap();
        let out = s.run_consensus(200, &mut ledger);
        for i in 0..10 {
            for (j, mean) in means.iter().enumerate() {
                assert!((out[[i, j]] - mean).norm() < 1e-8);
            }
        }
        assert_eq!(ledger.gossip_rounds, 200);
    }

    #[test]
    fn ledger_counts_are_exact() {
        let t = generate_small_world(10, 4, 0.2, 3).unwrap();
        let w = best_constant_weights(&t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ledger = CommLedger::default();
        let mut s = GossipSession::new(&w, random_state(&mut rng, 10, 5)).unwrap();
        for _ in 0..13 {
            s.step_round(&mut ledger);
        }
        assert_eq!(ledger.gossip_rounds, 13);
        // 20 edges, width 5, both directions.
        assert_eq!(ledger.scalars_transmitted, 13 * 2 * 20 * 5);
        assert_eq!(s.round(), 13);
    }

    #[test]
    fn ac_estimate_scales_to_inner_product() {
        // a = [1, 1], b = [2, 4]: node i starts from conj(a_i) b_i.
        let w = k2_weights();
        let mut ledger = CommLedger::default();
        let mut s = GossipSession::new(&w, array![[c(2.0, 0.0)], [c(4.0, 0.0)]]).unwrap();
        let out = s.run_consensus(1, &mut ledger);
        let est = ac_estimate(&out, 2);
        assert!((est[[0, 0]] - c(6.0, 0.0)).norm() < 1e-15);
        assert!((est[[1, 0]] - c(6.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn deviation_decays_geometrically() {
        let t = generate_small_world(10, 4, 0.2, 11).unwrap();
        let w = best_constant_weights(&t).unwrap();
        let gap = w.spectral_gap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let init = random_state(&mut rng, 10, 1);
        let means = column_means(&init);
        let dev0 = init
            .column(0)
            .iter()
            .map(|z| (z - means[0]).norm())
            .fold(0.0f64, f64::max);
        let mut ledger = CommLedger::default();
        let mut s = GossipSession::new(&w, init).unwrap();
        for k in 1..=60u32 {
            s.step_round(&mut ledger);
            let dev = s
                .state()
                .column(0)
                .iter()
                .map(|z| (z - means[0]).norm())
                .fold(0.0f64, f64::max);
            let bound = dev0 * gap.powi(k as i32) * (10.0f64).sqrt();
            assert!(dev <= bound + 1e-13, "round {k}: {dev} > {bound}");
        }
    }

    #[test]
    fn batched_columns_match_individual_runs() {
        let t = generate_small_world(8, 4, 0.3, 5).unwrap();
        let w = best_constant_weights(&t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let init = random_state(&mut rng, 8, 3);
        let mut ledger = CommLedger::default();
        let mut wide = GossipSession::new(&w, init.clone()).unwrap();
        let wide_out = wide.run_consensus(25, &mut ledger);
        for j in 0..3 {
            let col = init.column(j).to_owned().insert_axis(ndarray::Axis(1));
            let mut narrow = GossipSession::new(&w, col).unwrap();
            let narrow_out = narrow.run_consensus(25, &mut ledger);
            for i in 0..8 {
                assert_eq!(wide_out[[i, j]], narrow_out[[i, 0]]);
            }
        }
    }

    #[test]
    fn exact_average_properties() {
        let init = array![[c(2.0, 0.0)], [c(4.0, 0.0)]];
        let avg = exact_average(&init);
        assert_eq!(avg[[0, 0]], c(3.0, 0.0));
        assert_eq!(avg[[1, 0]], c(3.0, 0.0));
        let twice = exact_average(&avg);
        assert_eq!(avg, twice);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn average_is_conserved(
            seed in 0u64..500,
            graph_seed in 0u64..100,
            rounds in 1u64..40,
            width in 1usize..6,
        ) {
            let t = generate_small_world(9, 4, 0.25, graph_seed).unwrap();
            let w = best_constant_weights(&t).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let init = random_state(&mut rng, 9, width);
            let before = column_means(&init);
            let mut ledger = CommLedger::default();
            let mut s = GossipSession::new(&w, init).unwrap();
            s.run_consensus(rounds, &mut ledger);
            let after = column_means(s.state());
            for (b, a) in before.iter().zip(after.iter()) {
                let scale = b.norm().max(1.0);
                prop_assert!((b - a).norm() <= 1e-10 * scale);
            }
            prop_assert_eq!(ledger.gossip_rounds, rounds);
        }
    }
}
