//! Estimating a sparse precision matrix from scattered Gaussian
//! samples.
//!
//! Agent `i` holds `m_i` samples and the negative log-likelihood
//! `h_i(X) = m_i (tr(X Y_i) - logdet X)` built on its empirical
//! second-moment matrix `Y_i`. The shared constraint keeps the
//! spectrum of `X` inside a box `[l, u]`, which also keeps every
//! iterate safely positive definite. Matrix variables travel through
//! the solvers flattened row-major.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dist::{DistAgent, DistProblem};
use crate::graph::MixingMatrix;
use crate::operators::{stack_rows, unstack_rows, SmoothOracle, SpectralBox};

#[derive(Debug, Clone)]
pub struct CovarianceConfig {
    /// Matrices are `dim x dim`.
    pub dim: usize,
    pub n_agents: usize,
    pub samples_per_agent: usize,
    /// Spectral box for the estimate; the planted precision matrix is
    /// placed strictly inside it.
    pub lower: f64,
    pub upper: f64,
    /// Probability of planting each off-diagonal entry.
    pub sparsity: f64,
    pub seed: u64,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        Self {
            dim: 5,
            n_agents: 10,
            samples_per_agent: 1,
            lower: 0.7,
            upper: 1.8,
            sparsity: 0.2,
            seed: 13,
        }
    }
}

pub struct CovarianceInstance {
    pub dim: usize,
    /// Planted precision matrix, spectrum inside the inner tenth of
    /// the box.
    pub precision: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    /// Per-agent empirical second-moment matrices.
    pub moments: Vec<DMatrix<f64>>,
    pub weights: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

/// Sparse symmetric matrix whose spectrum is affinely squeezed into
/// `[l + 0.1 (u - l), u - 0.1 (u - l)]`.
fn planted_precision(cfg: &CovarianceConfig, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let d = cfg.dim;
    let mut p = DMatrix::identity(d, d);
    for i in 0..d {
        for j in (i + 1)..d {
            if rng.gen::<f64>() < cfg.sparsity {
                let w = if rng.gen::<bool>() { 0.3 } else { -0.3 };
                p[(i, j)] = w;
                p[(j, i)] = w;
            }
        }
    }
    let eig = p.symmetric_eigen();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &e in eig.eigenvalues.iter() {
        lo = lo.min(e);
        hi = hi.max(e);
    }
    let margin = 0.1 * (cfg.upper - cfg.lower);
    let (tl, tu) = (cfg.lower + margin, cfg.upper - margin);
    let scale = if hi > lo { (tu - tl) / (hi - lo) } else { 0.0 };
    let mapped = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| tl + (e - lo) * scale));
    &eig.eigenvectors * mapped * eig.eigenvectors.transpose()
}

pub fn build(cfg: &CovarianceConfig) -> CovarianceInstance {
    assert!(cfg.dim >= 1 && cfg.n_agents >= 1 && cfg.samples_per_agent >= 1);
    assert!(cfg.lower > 0.0 && cfg.upper > cfg.lower);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let precision = planted_precision(cfg, &mut rng);
    let sigma = precision
        .clone()
        .cholesky()
        .expect("planted precision is positive definite")
        .inverse();
    let chol = sigma.clone().cholesky().expect("covariance is positive definite");
    let l = chol.l();
    let d = cfg.dim;
    let mut moments = Vec::new();
    let mut weights = Vec::new();
    for _ in 0..cfg.n_agents {
        let mut y = DMatrix::zeros(d, d);
        for _ in 0..cfg.samples_per_agent {
            let eps = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let z = &l * eps;
            y += &z * z.transpose();
        }
        y /= cfg.samples_per_agent as f64;
        moments.push(y);
        weights.push(cfg.samples_per_agent as f64);
    }
    CovarianceInstance {
        dim: d,
        precision,
        sigma,
        moments,
        weights,
        lower: cfg.lower,
        upper: cfg.upper,
    }
}

/// `X -> w (tr(X Y) - logdet X)` on row-major flattened matrices.
/// The input is symmetrized before use, so the oracle is the
/// composition of the matrix function with the symmetrization map and
/// its gradient is symmetric.
pub struct LogDetH {
    pub y: DMatrix<f64>,
    pub weight: f64,
}

impl LogDetH {
    fn symmetrized(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let d = self.y.nrows();
        let x = unstack_rows(v, d, d);
        (&x + x.transpose()) * 0.5
    }
}

impl SmoothOracle for LogDetH {
    fn value(&self, v: &DVector<f64>) -> f64 {
        let x = self.symmetrized(v);
        match x.clone().cholesky() {
            Some(c) => {
                let logdet: f64 = (0..x.nrows()).map(|i| c.l()[(i, i)].ln()).sum::<f64>() * 2.0;
                self.weight * ((&x * &self.y).trace() - logdet)
            }
            None => f64::INFINITY,
        }
    }

    fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        let x = self.symmetrized(v);
        let inv = x
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| DMatrix::from_element(x.nrows(), x.ncols(), f64::NAN));
        let g = (&self.y - inv) * self.weight;
        stack_rows(&((&g + g.transpose()) * 0.5))
    }
}

pub fn dist_problem(inst: &CovarianceInstance, mixing: MixingMatrix) -> DistProblem {
    let d = inst.dim;
    let agents = (0..inst.moments.len())
        .map(|i| DistAgent {
            f: Arc::new(SpectralBox { l: inst.lower, u: inst.upper, d }),
            h: Arc::new(LogDetH { y: inst.moments[i].clone(), weight: inst.weights[i] }),
        })
        .collect();
    DistProblem { agents, mixing, dim: d * d }
}

/// Identity start for every agent.
pub fn starting_point(inst: &CovarianceInstance, n_agents: usize) -> DMatrix<f64> {
    let d = inst.dim;
    let eye = stack_rows(&DMatrix::identity(d, d));
    DMatrix::from_fn(n_agents, d * d, |_, j| eye[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::fd_gradient;
    use approx::assert_relative_eq;

    #[test]
    fn planted_spectrum_sits_inside_the_inner_box() {
        let cfg = CovarianceConfig::default();
        let inst = build(&cfg);
        let eig = inst.precision.clone().symmetric_eigen();
        let margin = 0.1 * (cfg.upper - cfg.lower);
        for &e in eig.eigenvalues.iter() {
            assert!(e >= cfg.lower + margin - 1e-10);
            assert!(e <= cfg.upper - margin + 1e-10);
        }
        let eye = &inst.precision * &inst.sigma;
        assert!((eye - DMatrix::identity(cfg.dim, cfg.dim)).norm() < 1e-10);
    }

    #[test]
    fn instances_are_seed_deterministic() {
        let cfg = CovarianceConfig::default();
        let (a, b) = (build(&cfg), build(&cfg));
        assert_eq!(a.moments, b.moments);
        let c = build(&CovarianceConfig { seed: cfg.seed + 1, ..cfg });
        assert_ne!(a.moments, c.moments);
    }

    #[test]
    fn value_at_identity_is_the_trace() {
        let y = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let h = LogDetH { y: y.clone(), weight: 3.0 };
        let eye = stack_rows(&DMatrix::identity(2, 2));
        assert_relative_eq!(h.value(&eye), 3.0 * y.trace(), max_relative = 1e-14);
    }

    #[test]
    fn value_is_infinite_off_the_cone() {
        let h = LogDetH { y: DMatrix::identity(2, 2), weight: 1.0 };
        let x = stack_rows(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
        assert_eq!(h.value(&x), f64::INFINITY);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = CovarianceConfig { dim: 3, n_agents: 2, samples_per_agent: 4, ..CovarianceConfig::default() };
        let inst = build(&cfg);
        let h = LogDetH { y: inst.moments[0].clone(), weight: inst.weights[0] };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let mut m = DMatrix::identity(3, 3);
            for i in 0..3 {
                for j in 0..3 {
                    m[(i, j)] += 0.1 * rng.gen_range(-1.0..1.0);
                }
            }
            let x = stack_rows(&m);
            let g = h.gradient(&x);
            let fd = fd_gradient(&h, &x, None).unwrap();
            assert!((g - fd).norm() <= 1e-5 * h.gradient(&x).norm().max(1.0));
        }
    }

    #[test]
    fn gradient_vanishes_at_the_unconstrained_mle() {
        // With Y invertible the smooth part is stationary at Y^{-1}.
        let y = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.9]);
        let h = LogDetH { y: y.clone(), weight: 2.0 };
        let x = stack_rows(&y.clone().try_inverse().unwrap());
        assert!(h.gradient(&x).norm() < 1e-12);
    }

    #[test]
    fn starting_point_stacks_the_identity() {
        let inst = build(&CovarianceConfig { dim: 3, ..CovarianceConfig::default() });
        let x1 = starting_point(&inst, 4);
        assert_eq!(x1.nrows(), 4);
        for i in 0..4 {
            let m = unstack_rows(&x1.row(i).transpose(), 3, 3);
            assert_eq!(m, DMatrix::identity(3, 3));
        }
    }
}
