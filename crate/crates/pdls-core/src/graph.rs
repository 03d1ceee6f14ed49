//! Agent network topologies and gossip (mixing) matrices.
//!
//! A mixing matrix `W` must be symmetric, supported on the graph's
//! edges (plus the diagonal), have `ker(I - W) = span{1}`, and have
//! spectrum in `(-1, 1]`. Those four properties are what the
//! distributed solver relies on, so they are all checked here, once, at
//! construction time; everything downstream can take them for granted.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;

use crate::operators::RowMixMap;

/// Undirected simple graph over agents `0..n`, neighbor lists sorted.
#[derive(Debug, Clone)]
pub struct Topology {
    n: usize,
    adj: Vec<Vec<usize>>,
}

/// Why a topology or candidate mixing matrix was rejected.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphError {
    EmptyGraph,
    SelfLoop { node: usize },
    BadEdge { i: usize, j: usize },
    Disconnected,
    WrongSize { expected: usize, got: usize },
    NonNeighborEntry { i: usize, j: usize },
    NotSymmetric { i: usize, j: usize },
    RowSumNotOne { i: usize, sum: f64 },
    ConsensusKernelTooBig { second_eigenvalue: f64 },
    EigenvalueOutOfRange { lambda: f64 },
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::EmptyGraph => write!(f, "graph needs at least one node"),
            GraphError::SelfLoop { node } => write!(f, "self loop at node {node}"),
            GraphError::BadEdge { i, j } => write!(f, "edge ({i}, {j}) out of range"),
            GraphError::Disconnected => write!(f, "graph is not connected"),
            GraphError::WrongSize { expected, got } => {
                write!(f, "matrix is {got}x{got}, topology has {expected} nodes")
            }
            GraphError::NonNeighborEntry { i, j } => {
                write!(f, "nonzero weight at non-edge ({i}, {j})")
            }
            GraphError::NotSymmetric { i, j } => write!(f, "W[{i},{j}] != W[{j},{i}]"),
            GraphError::RowSumNotOne { i, sum } => {
                write!(f, "row {i} sums to {sum}, expected 1")
            }
            GraphError::ConsensusKernelTooBig { second_eigenvalue } => write!(
                f,
                "ker(I - W) is larger than the consensus line (second eigenvalue {second_eigenvalue})"
            ),
            GraphError::EigenvalueOutOfRange { lambda } => {
                write!(f, "eigenvalue {lambda} outside (-1, 1]")
            }
        }
    }
}

impl std::error::Error for GraphError {}

impl Topology {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::EmptyGraph);
        }
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i == j {
                return Err(GraphError::SelfLoop { node: i });
            }
            if i >= n || j >= n {
                return Err(GraphError::BadEdge { i, j });
            }
            if !adj[i].contains(&j) {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Ok(Self { n, adj })
    }

    pub fn ring(n: usize) -> Self {
        assert!(n >= 3, "a ring needs at least 3 nodes");
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::from_edges(n, &edges).unwrap()
    }

    pub fn path(n: usize) -> Self {
        assert!(n >= 1);
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges).unwrap()
    }

    pub fn complete(n: usize) -> Self {
        assert!(n >= 1);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                edges.push((i, j));
            }
        }
        Self::from_edges(n, &edges).unwrap()
    }

    pub fn star(n: usize) -> Self {
        assert!(n >= 2, "a star needs a hub and at least one leaf");
        let edges: Vec<_> = (1..n).map(|i| (0, i)).collect();
        Self::from_edges(n, &edges).unwrap()
    }

    /// Uniform points in the unit square joined below a connection
    /// radius; the radius grows until the graph is connected, so the
    /// result is deterministic in `(n, seed)` and always usable.
    pub fn random_geometric(n: usize, seed: u64) -> Self {
        assert!(n >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect();
        let mut radius = (2.0 * (n.max(2) as f64).ln() / n as f64).sqrt();
        loop {
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
                    if (dx * dx + dy * dy).sqrt() < radius {
                        edges.push((i, j));
                    }
                }
            }
            let topo = Self::from_edges(n, &edges).unwrap();
            if topo.is_connected() {
                return topo;
            }
            radius *= 1.25;
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    /// Sorted neighbor list of `i` (never contains `i` itself).
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(|a| a.len()).sum::<usize>() / 2
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for &j in &self.adj[i] {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        let mut seen = vec![false; self.n];
        let mut queue = vec![0usize];
        seen[0] = true;
        while let Some(i) = queue.pop() {
            for &j in &self.adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Validated mixing matrix together with its topology and the spectral
/// quantities the solver needs.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    w: DMatrix<f64>,
    topo: Topology,
    lambda_min: f64,
}

/// Eigenvalue tolerance for kernel-gap and range checks.
const EIG_TOL: f64 = 1e-10;

impl MixingMatrix {
    /// Metropolis weights: `W_ij = 1 / (1 + max(deg i, deg j))` on edges,
    /// diagonal filled to make rows sum to one.
    pub fn metropolis(topo: Topology) -> Result<Self, GraphError> {
        if !topo.is_connected() {
            return Err(GraphError::Disconnected);
        }
        let n = topo.n();
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut off = 0.0;
            for &j in topo.neighbors(i) {
                let wij = 1.0 / (1.0 + topo.degree(i).max(topo.degree(j)) as f64);
                w[(i, j)] = wij;
                off += wij;
            }
            w[(i, i)] = 1.0 - off;
        }
        Self::validate(w, topo)
    }

    /// Checks a candidate matrix against the mixing-matrix definition and
    /// takes ownership if it passes. Symmetry and edge support are
    /// checked exactly as stored; spectral properties to `1e-10`.
    pub fn validate(w: DMatrix<f64>, topo: Topology) -> Result<Self, GraphError> {
        let n = topo.n();
        if !topo.is_connected() {
            return Err(GraphError::Disconnected);
        }
        if w.nrows() != n || w.ncols() != n {
            return Err(GraphError::WrongSize { expected: n, got: w.nrows() });
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && w[(i, j)] != 0.0 && !topo.neighbors(i).contains(&j) {
                    return Err(GraphError::NonNeighborEntry { i, j });
                }
                if w[(i, j)] != w[(j, i)] {
                    return Err(GraphError::NotSymmetric { i, j });
                }
            }
        }
        for i in 0..n {
            let sum: f64 = w.row(i).iter().sum();
            if (sum - 1.0).abs() > EIG_TOL {
                return Err(GraphError::RowSumNotOne { i, sum });
            }
        }
        let mut eigs: Vec<f64> = w.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lambda_min = eigs[0];
        let lambda_max = eigs[n - 1];
        if lambda_max > 1.0 + 1e-12 {
            return Err(GraphError::EigenvalueOutOfRange { lambda: lambda_max });
        }
        if n > 1 && lambda_min <= -1.0 + EIG_TOL {
            return Err(GraphError::EigenvalueOutOfRange { lambda: lambda_min });
        }
        if n > 1 {
            // Row sums pin the top eigenvalue at 1; a second eigenvalue
            // this close to 1 would mean ker(I - W) exceeds the
            // consensus line.
            let second = eigs[n - 2];
            if second >= 1.0 - EIG_TOL {
                return Err(GraphError::ConsensusKernelTooBig { second_eigenvalue: second });
            }
        }
        Ok(Self { w, topo, lambda_min })
    }

    pub fn n(&self) -> usize {
        self.topo.n()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// Norm of the consensus operator's square root, `sqrt((1 - lambda_min)/2)`.
    /// This is the `||K||` entering stepsize caps.
    pub fn consensus_norm(&self) -> f64 {
        (0.5 * (1.0 - self.lambda_min)).sqrt()
    }

    /// The self-adjoint consensus operator `x -> (I - W)x / 2` acting on
    /// the agent axis of a stacked `n x d` variable. Its reported
    /// operator norm is [`consensus_norm`](Self::consensus_norm), the
    /// norm of its square root, which is what stepsize rules consume.
    pub fn consensus_map(&self, d: usize) -> RowMixMap {
        let n = self.n();
        let m = (DMatrix::identity(n, n) - &self.w) * 0.5;
        RowMixMap::new(m, d, self.consensus_norm(), true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{stack_rows, LinearMap};
    use nalgebra::DVector;

    /// Dense eigensolver oracle: smallest eigenvalue straight from the
    /// symmetric eigendecomposition of a copy.
    fn eig_min(w: &DMatrix<f64>) -> f64 {
        w.clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, &e| m.min(e))
    }

    #[test]
    fn metropolis_two_node_path() {
        let w = MixingMatrix::metropolis(Topology::path(2)).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(w.matrix(), &want);
        assert!((w.lambda_min() - 0.0).abs() < 1e-12);
    }

    #[test]
    fn metropolis_single_node() {
        let w = MixingMatrix::metropolis(Topology::path(1)).unwrap();
        assert_eq!(w.matrix(), &DMatrix::from_element(1, 1, 1.0));
        assert!((w.lambda_min() - 1.0).abs() < 1e-12);
        assert_eq!(w.consensus_norm(), 0.0);
    }

    #[test]
    fn metropolis_ring_four() {
        let w = MixingMatrix::metropolis(Topology::ring(4)).unwrap();
        for i in 0..4 {
            let sum: f64 = w.matrix().row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-14);
            for j in 0..4 {
                assert_eq!(w.weight(i, j), w.weight(j, i));
                let is_edge = (i + 1) % 4 == j || (j + 1) % 4 == i;
                if i != j && !is_edge {
                    assert_eq!(w.weight(i, j), 0.0);
                }
            }
        }
        // Circulant spectrum 1/3 + (2/3) cos(2 pi k / 4).
        assert!((w.lambda_min() - (-1.0 / 3.0)).abs() < 1e-12);
        assert!((w.lambda_min() - eig_min(w.matrix())).abs() < 1e-12);
    }

    #[test]
    fn identity_rejected_for_multinode_graphs() {
        let err = MixingMatrix::validate(DMatrix::identity(2, 2), Topology::path(2)).unwrap_err();
        assert!(matches!(err, GraphError::ConsensusKernelTooBig { .. }));
    }

    #[test]
    fn swap_matrix_rejected() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let err = MixingMatrix::validate(w, Topology::path(2)).unwrap_err();
        assert!(matches!(err, GraphError::EigenvalueOutOfRange { .. }));
    }

    #[test]
    fn asymmetric_and_off_support_rejected() {
        let w = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.3, 0.7]);
        assert!(matches!(
            MixingMatrix::validate(w, Topology::path(2)),
            Err(GraphError::NotSymmetric { .. })
        ));
        let w = DMatrix::from_row_slice(3, 3, &[0.5, 0.3, 0.2, 0.3, 0.7, 0.0, 0.2, 0.0, 0.8]);
        assert!(matches!(
            MixingMatrix::validate(w, Topology::path(3)),
            Err(GraphError::NonNeighborEntry { i: 0, j: 2 })
        ));
    }

    #[test]
    fn disconnected_topology_rejected() {
        let topo = Topology::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        assert!(matches!(MixingMatrix::metropolis(topo), Err(GraphError::Disconnected)));
    }

    #[test]
    fn complete_uniform_weights_hit_spectral_floor() {
        // n = 2 degenerates to the swap matrix with lambda_min exactly
        // -1, which the spectral check must refuse.
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(
            MixingMatrix::validate(swap, Topology::complete(2)),
            Err(GraphError::EigenvalueOutOfRange { .. })
        ));
        for n in 3..=8 {
            let nf = n as f64;
            let w = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 / (nf - 1.0) });
            let m = MixingMatrix::validate(w, Topology::complete(n)).unwrap();
            assert!(m.lambda_min() >= -1.0 / (nf - 1.0) - 1e-12);
            assert!((m.lambda_min() - (-1.0 / (nf - 1.0))).abs() < 1e-10);
        }
    }

    #[test]
    fn generators_are_connected_simple_graphs() {
        let topos = vec![
            Topology::ring(5),
            Topology::path(6),
            Topology::complete(4),
            Topology::star(7),
            Topology::random_geometric(12, 99),
        ];
        for topo in &topos {
            assert!(topo.is_connected());
            for i in 0..topo.n() {
                assert!(!topo.neighbors(i).contains(&i), "no self loops");
                let mut sorted = topo.neighbors(i).to_vec();
                sorted.sort_unstable();
                assert_eq!(sorted, topo.neighbors(i));
            }
            // Metropolis on every generator must pass the full validation.
            MixingMatrix::metropolis(topo.clone()).unwrap();
        }
    }

    #[test]
    fn random_geometric_is_deterministic() {
        let a = Topology::random_geometric(20, 7);
        let b = Topology::random_geometric(20, 7);
        assert_eq!(a.edges(), b.edges());
    }

    #[test]
    fn consensus_map_two_agent_average() {
        let w = MixingMatrix::metropolis(Topology::path(2)).unwrap();
        let map = w.consensus_map(1);
        // (I - W)/2 = [[1/4, -1/4], [-1/4, 1/4]].
        let v = DVector::from_column_slice(&[3.0, 1.0]);
        let out = map.apply(&v);
        assert!((out - DVector::from_column_slice(&[0.5, -0.5])).norm() < 1e-14);
        assert!((map.operator_norm().powi(2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn consensus_map_norm_matches_dense_spectrum() {
        let w = MixingMatrix::metropolis(Topology::ring(4)).unwrap();
        let map = w.consensus_map(3);
        let want = (0.5 * (1.0 - eig_min(w.matrix()))).sqrt();
        assert!((map.operator_norm() - want).abs() < 1e-12);
        assert!((map.operator_norm().powi(2) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn consensus_map_kills_consensus_states() {
        for topo in [Topology::ring(6), Topology::star(5), Topology::random_geometric(9, 3)] {
            let w = MixingMatrix::metropolis(topo).unwrap();
            let n = w.n();
            let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 2.5 } else { -0.75 });
            let out = w.consensus_map(2).apply(&stack_rows(&x));
            assert!(out.norm() < 1e-12, "consensus input must map to zero");
        }
    }
}
