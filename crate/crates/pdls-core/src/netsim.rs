//! Synchronous message-passing simulator.
//!
//! Rounds follow a bulk-synchronous model: within a round every agent
//! computes from its own state plus its neighbors' published payloads,
//! then all communication happens at the round barrier. The simulator
//! provides the three primitives the solvers need (a gossip step against
//! a mixing matrix and scalar sum/min allreduces) and keeps an exact
//! tally of what crossed the wire, so experiments can report cost in
//! communication rounds rather than wall time.
//!
//! Determinism: every reduction folds in ascending agent order, and
//! per-agent round work is pure, so a parallel schedule produces exactly
//! the bytes a single-threaded round-robin schedule would.

use nalgebra::{DMatrix, RowDVector};

use crate::error::SolverError;
use crate::graph::MixingMatrix;
use crate::par;

/// Communication counters, all cumulative and monotone.
///
/// `vector_values_moved` counts scalar payload entries carried by gossip
/// rounds: one `neighbor_mix` on an `n x d` payload moves `d` values in
/// each direction over each edge, hence `2 |E| d` per call. Allreduce
/// traffic is tracked by its call counters only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tallies {
    pub neighbor_rounds: u64,
    pub allreduce_sum_calls: u64,
    pub allreduce_min_calls: u64,
    pub vector_values_moved: u64,
}

/// Read-only view an agent gets during a gossip round: its own payload
/// row plus the rows its neighbors published. Any other access panics,
/// which keeps locality violations loud in tests.
pub struct AgentSlot<'a> {
    id: usize,
    payload: &'a DMatrix<f64>,
    neighbors: &'a [usize],
}

impl<'a> AgentSlot<'a> {
    pub fn id(&self) -> usize {
        self.id
    }

    /// Payload row of `j`, allowed only for `j == id` or a neighbor.
    pub fn row(&self, j: usize) -> RowDVector<f64> {
        assert!(
            j == self.id || self.neighbors.contains(&j),
            "agent {} read row {} outside its neighborhood",
            self.id,
            j
        );
        self.payload.row(j).into_owned()
    }
}

/// Simulated synchronous network over `n` agents.
#[derive(Debug, Clone)]
pub struct Network {
    n: usize,
    tallies: Tallies,
}

impl Network {
    pub fn new(n: usize) -> Self {
        Self { n, tallies: Tallies::default() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tallies(&self) -> Tallies {
        self.tallies
    }

    /// One gossip round: row `i` of the result is
    /// `sum_{j in N(i) + {i}} W_ij * payload_j`, each row summed in
    /// ascending neighbor order through the agent's [`AgentSlot`].
    pub fn neighbor_mix(
        &mut self,
        w: &MixingMatrix,
        payload: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>, SolverError> {
        if w.n() != self.n {
            return Err(SolverError::DimensionMismatch { what: "mixing matrix size vs network size" });
        }
        if payload.nrows() != self.n {
            return Err(SolverError::DimensionMismatch { what: "payload rows vs network size" });
        }
        let d = payload.ncols();
        let rows = par::map_agents(self.n, |i| mixed_row(w, payload, i));
        let mut out = DMatrix::zeros(self.n, d);
        for (i, row) in rows.into_iter().enumerate() {
            out.set_row(i, &row);
        }
        self.tallies.neighbor_rounds += 1;
        self.tallies.vector_values_moved += 2 * w.topology().edge_count() as u64 * d as u64;
        Ok(out)
    }

    /// Scalar allreduce: every agent contributes one value, everyone
    /// learns the total. The fold is a left fold in agent order.
    pub fn allreduce_sum(&mut self, locals: &[f64]) -> Result<f64, SolverError> {
        if locals.len() != self.n {
            return Err(SolverError::DimensionMismatch { what: "allreduce inputs vs network size" });
        }
        self.tallies.allreduce_sum_calls += 1;
        Ok(locals.iter().fold(0.0, |acc, &x| acc + x))
    }

    /// Scalar min-allreduce, left fold in agent order.
    pub fn allreduce_min(&mut self, locals: &[f64]) -> Result<f64, SolverError> {
        if locals.len() != self.n {
            return Err(SolverError::DimensionMismatch { what: "allreduce inputs vs network size" });
        }
        self.tallies.allreduce_min_calls += 1;
        Ok(locals.iter().fold(f64::INFINITY, |acc, &x| acc.min(x)))
    }
}

/// Row `i` of the gossip product, computed only from slot-visible rows.
/// Summation order is `{i} merged into sorted N(i)`, ascending.
pub(crate) fn mixed_row(w: &MixingMatrix, payload: &DMatrix<f64>, i: usize) -> RowDVector<f64> {
    let neighbors = w.topology().neighbors(i);
    let slot = AgentSlot { id: i, payload, neighbors };
    let mut acc = RowDVector::zeros(payload.ncols());
    let mut self_added = false;
    for &j in neighbors {
        if !self_added && j > i {
            acc += slot.row(i) * w.weight(i, i);
            self_added = true;
        }
        acc += slot.row(j) * w.weight(i, j);
    }
    if !self_added {
        acc += slot.row(i) * w.weight(i, i);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Topology;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn ring_mix(n: usize) -> MixingMatrix {
        MixingMatrix::metropolis(Topology::ring(n)).unwrap()
    }

    #[test]
    fn consensus_payload_is_fixed_point() {
        let w = ring_mix(5);
        let mut net = Network::new(5);
        let payload = DMatrix::from_fn(5, 3, |_, j| j as f64 - 1.0);
        let out = net.neighbor_mix(&w, &payload).unwrap();
        assert!((out - payload).norm() < 1e-14);
    }

    #[test]
    fn two_agent_average() {
        let w = MixingMatrix::metropolis(Topology::path(2)).unwrap();
        let mut net = Network::new(2);
        let payload = DMatrix::from_row_slice(2, 1, &[4.0, -2.0]);
        let out = net.neighbor_mix(&w, &payload).unwrap();
        assert!((out - DMatrix::from_row_slice(2, 1, &[1.0, 1.0])).norm() < 1e-14);
    }

    #[test]
    fn matches_dense_product() {
        // Dense matrix multiply is the oracle for the sparse gossip sum.
        let mut rng = StdRng::seed_from_u64(2);
        for topo in [Topology::ring(7), Topology::star(6), Topology::random_geometric(10, 4)] {
            let n = topo.n();
            let w = MixingMatrix::metropolis(topo).unwrap();
            let mut net = Network::new(n);
            let payload = DMatrix::from_fn(n, 4, |_, _| rng.gen_range(-2.0..2.0));
            let got = net.neighbor_mix(&w, &payload).unwrap();
            let want = w.matrix() * &payload;
            assert!((got - want).norm() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let w = ring_mix(4);
        let mut net = Network::new(4);
        assert!(net.neighbor_mix(&w, &DMatrix::zeros(3, 2)).is_err());
        assert!(net.allreduce_sum(&[1.0, 2.0]).is_err());
        let mut net5 = Network::new(5);
        assert!(net5.neighbor_mix(&w, &DMatrix::zeros(5, 2)).is_err());
    }

    #[test]
    fn allreduce_sum_basics_and_fold_order() {
        let mut net = Network::new(3);
        assert_eq!(net.allreduce_sum(&[1.0, 2.0, 3.0]).unwrap(), 6.0);
        assert_eq!(net.allreduce_sum(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        let mut net10 = Network::new(10);
        let xs = [0.1f64; 10];
        // Bitwise identical to the sequential left fold, by construction.
        let want = xs.iter().fold(0.0f64, |a, &b| a + b);
        assert_eq!(net10.allreduce_sum(&xs).unwrap().to_bits(), want.to_bits());
    }

    #[test]
    fn allreduce_min_basics() {
        let mut net = Network::new(4);
        assert_eq!(net.allreduce_min(&[3.0, 1.0, 2.0, 5.0]).unwrap(), 1.0);
        assert_eq!(net.allreduce_min(&[2.0, 2.0, 2.0, 2.0]).unwrap(), 2.0);
        let taus = [0.5, 0.125, 0.25, 0.125];
        assert_eq!(net.allreduce_min(&taus).unwrap(), 0.125);
    }

    #[test]
    fn repeated_rounds_are_identical() {
        let w = ring_mix(6);
        let mut rng = StdRng::seed_from_u64(9);
        let payload = DMatrix::from_fn(6, 5, |_, _| rng.gen_range(-1.0..1.0));
        let mut a = Network::new(6);
        let mut b = Network::new(6);
        let ra = a.neighbor_mix(&w, &payload).unwrap();
        let rb = b.neighbor_mix(&w, &payload).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.tallies(), b.tallies());
    }

    #[test]
    fn parallel_schedule_matches_sequential_bitwise() {
        let w = ring_mix(8);
        let mut rng = StdRng::seed_from_u64(13);
        let payload = DMatrix::from_fn(8, 6, |_, _| rng.gen_range(-3.0..3.0));
        let mut net = Network::new(8);
        let par_out = net.neighbor_mix(&w, &payload).unwrap();
        let seq_rows = par::map_agents_seq(8, |i| mixed_row(&w, &payload, i));
        for (i, row) in seq_rows.iter().enumerate() {
            for j in 0..6 {
                assert_eq!(par_out[(i, j)].to_bits(), row[j].to_bits());
            }
        }
    }

    #[test]
    fn rows_depend_only_on_neighborhood() {
        // Poison the rows outside N(i) + {i}; agent i's output row must
        // not notice, which proves neighbor_mix never read them.
        let topo = Topology::ring(6);
        let w = MixingMatrix::metropolis(topo.clone()).unwrap();
        let mut rng = StdRng::seed_from_u64(21);
        let clean = DMatrix::from_fn(6, 3, |_, _| rng.gen_range(-1.0..1.0));
        let mut net = Network::new(6);
        let reference = net.neighbor_mix(&w, &clean).unwrap();
        for i in 0..6 {
            let mut poisoned = clean.clone();
            for j in 0..6 {
                if j != i && !topo.neighbors(i).contains(&j) {
                    poisoned.row_mut(j).fill(f64::NAN);
                }
            }
            let row = mixed_row(&w, &poisoned, i);
            for c in 0..3 {
                assert_eq!(row[c].to_bits(), reference[(i, c)].to_bits());
            }
        }
    }

    #[test]
    #[should_panic(expected = "outside its neighborhood")]
    fn slot_refuses_non_neighbor_reads() {
        let payload = DMatrix::zeros(4, 1);
        let neighbors = [1usize];
        let slot = AgentSlot { id: 0, payload: &payload, neighbors: &neighbors };
        let _ = slot.row(3);
    }

    #[test]
    fn tallies_count_primitive_calls() {
        let w = ring_mix(5);
        let mut net = Network::new(5);
        let payload = DMatrix::zeros(5, 7);
        net.neighbor_mix(&w, &payload).unwrap();
        net.neighbor_mix(&w, &payload).unwrap();
        net.allreduce_sum(&[0.0; 5]).unwrap();
        net.allreduce_min(&[1.0; 5]).unwrap();
        net.allreduce_min(&[1.0; 5]).unwrap();
        net.allreduce_min(&[1.0; 5]).unwrap();
        let t = net.tallies();
        assert_eq!(t.neighbor_rounds, 2);
        assert_eq!(t.allreduce_sum_calls, 1);
        assert_eq!(t.allreduce_min_calls, 3);
        // Ring on 5 nodes has 5 edges; payload width 7.
        assert_eq!(t.vector_values_moved, 2 * 5 * 7 * 2);
    }
}
