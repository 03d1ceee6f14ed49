//! Slow but independent baselines: finite-difference gradients, a
//! centralized solver for the consensus objective, first-order
//! certificates, and the dense embedding of a distributed problem
//! into the generic saddle form for monitoring and equivalence runs.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dist::{DistLsOutcome, DistObserver, DistProblem, DistState};
use crate::error::SolverError;
use crate::operators::{
    stack_rows, ProxOracle, RowMixMap, SmoothOracle, StackedProx, StackedSmooth, ZeroProx,
};
use crate::saddle::{ErgodicAccumulator, GapMonitor, LinesearchParams, PdState, SaddleProblem};

/// Central-difference gradient of `h` at `x`. The default probe is
/// `1e-6 (1 + ||x||)`; if a probe leaves the domain of `h` the step
/// shrinks once by `1e-3` before giving up.
pub fn fd_gradient(
    h: &dyn SmoothOracle,
    x: &DVector<f64>,
    step: Option<f64>,
) -> Result<DVector<f64>, SolverError> {
    let mut s = step.unwrap_or(1e-6 * (1.0 + x.norm()));
    for _ in 0..2 {
        let mut g = DVector::zeros(x.len());
        let mut left_domain = false;
        for j in 0..x.len() {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[j] += s;
            lo[j] -= s;
            let (vh, vl) = (h.value(&hi), h.value(&lo));
            if !(vh.is_finite() && vl.is_finite()) {
                left_domain = true;
                break;
            }
            g[j] = (vh - vl) / (2.0 * s);
        }
        if !left_domain {
            return Ok(g);
        }
        s *= 1e-3;
    }
    Err(SolverError::DomainViolation { what: "finite-difference probe left the domain of h" })
}

/// Minimizer of `f + (1/n) sum_i h_i` found by an independent method;
/// `objective` is that averaged composite value and `kkt_residual`
/// the unit-step fixed-point residual `||x - prox_f(x - grad)||`.
pub struct ReferenceSolution {
    pub x_star: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub method: &'static str,
}

fn mean_value(hs: &[Arc<dyn SmoothOracle>], x: &DVector<f64>) -> f64 {
    hs.iter().map(|h| h.value(x)).sum::<f64>() / hs.len() as f64
}

fn mean_gradient(hs: &[Arc<dyn SmoothOracle>], x: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    for h in hs {
        g += h.gradient(x);
    }
    g / hs.len() as f64
}

fn fixed_point_residual(
    f: &dyn ProxOracle,
    hs: &[Arc<dyn SmoothOracle>],
    x: &DVector<f64>,
) -> f64 {
    let g = mean_gradient(hs, x);
    (x - f.prox(1.0, &(x - g))).norm()
}

/// Proximal gradient with backtracking on the averaged smooth part.
/// Stops when the unit-step fixed-point residual drops below `tol`.
pub fn centralized_solve(
    f: &dyn ProxOracle,
    hs: &[Arc<dyn SmoothOracle>],
    x0: &DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<ReferenceSolution, SolverError> {
    if hs.is_empty() {
        return Err(SolverError::InvalidParameter { what: "need at least one smooth term".into() });
    }
    let mut x = x0.clone();
    let mut t = 1.0;
    for k in 1..=max_iters {
        let val = mean_value(hs, &x);
        if !val.is_finite() {
            return Err(SolverError::DomainViolation { what: "centralized iterate left the domain of h" });
        }
        let g = mean_gradient(hs, &x);
        t *= 1.3;
        let mut accepted = None;
        for _ in 0..200 {
            let trial = f.prox(t, &(&x - &g * t));
            let dx = &trial - &x;
            let bound = val + g.dot(&dx) + dx.norm_squared() / (2.0 * t);
            if mean_value(hs, &trial) <= bound {
                accepted = Some(trial);
                break;
            }
            t *= 0.5;
        }
        let Some(x_new) = accepted else {
            return Err(SolverError::StepsizeUnderflow { agent: None, tau: t });
        };
        x = x_new;
        let r = fixed_point_residual(f, hs, &x);
        if r <= tol {
            return Ok(ReferenceSolution {
                objective: f.value(&x) + mean_value(hs, &x),
                x_star: x,
                kkt_residual: r,
                iterations: k,
                method: "prox_gradient",
            });
        }
    }
    let r = fixed_point_residual(f, hs, &x);
    Ok(ReferenceSolution {
        objective: f.value(&x) + mean_value(hs, &x),
        x_star: x,
        kkt_residual: r,
        iterations: max_iters,
        method: "prox_gradient",
    })
}

/// Accelerated variant with a gradient-based restart; used to
/// cross-check [`centralized_solve`] with a second method.
pub fn centralized_solve_accelerated(
    f: &dyn ProxOracle,
    hs: &[Arc<dyn SmoothOracle>],
    x0: &DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<ReferenceSolution, SolverError> {
    if hs.is_empty() {
        return Err(SolverError::InvalidParameter { what: "need at least one smooth term".into() });
    }
    let mut x_prev = x0.clone();
    let mut y = x0.clone();
    let mut t = 1.0;
    let mut momentum = 1.0f64;
    for k in 1..=max_iters {
        let val = mean_value(hs, &y);
        if !val.is_finite() {
            return Err(SolverError::DomainViolation { what: "centralized iterate left the domain of h" });
        }
        let g = mean_gradient(hs, &y);
        let mut accepted = None;
        for _ in 0..200 {
            let trial = f.prox(t, &(&y - &g * t));
            let dy = &trial - &y;
            let bound = val + g.dot(&dy) + dy.norm_squared() / (2.0 * t);
            if mean_value(hs, &trial) <= bound {
                accepted = Some(trial);
                break;
            }
            t *= 0.5;
        }
        let Some(x_new) = accepted else {
            return Err(SolverError::StepsizeUnderflow { agent: None, tau: t });
        };
        if (&y - &x_new).dot(&(&x_new - &x_prev)) > 0.0 {
            momentum = 1.0;
        }
        let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        y = &x_new + (&x_new - &x_prev) * ((momentum - 1.0) / next);
        momentum = next;
        let r = fixed_point_residual(f, hs, &x_new);
        x_prev = x_new;
        if r <= tol {
            return Ok(ReferenceSolution {
                objective: f.value(&x_prev) + mean_value(hs, &x_prev),
                x_star: x_prev,
                kkt_residual: r,
                iterations: k,
                method: "fista",
            });
        }
    }
    let r = fixed_point_residual(f, hs, &x_prev);
    Ok(ReferenceSolution {
        objective: f.value(&x_prev) + mean_value(hs, &x_prev),
        x_star: x_prev,
        kkt_residual: r,
        iterations: max_iters,
        method: "fista",
    })
}

/// Zero-sum dual stack `u_i = mean_j grad h_j(x*) - grad h_i(x*)`
/// that certifies `x*` together with the shared subgradient left for
/// `f`.
pub fn dual_certificate(prob: &DistProblem, x_star: &DVector<f64>) -> DMatrix<f64> {
    let n = prob.n();
    let grads: Vec<DVector<f64>> =
        prob.agents.iter().map(|a| a.h.gradient(x_star)).collect();
    let mut mean = DVector::zeros(x_star.len());
    for g in &grads {
        mean += g;
    }
    mean /= n as f64;
    DMatrix::from_fn(n, x_star.len(), |i, j| mean[j] - grads[i][j])
}

/// How far `x*` is from satisfying each agent's first-order
/// condition with the averaged gradient as the shared subgradient:
/// `max_i ||x* - prox_{f_i}(x* - mean_j grad h_j(x*))||`.
pub fn certificate_residual(prob: &DistProblem, x_star: &DVector<f64>) -> f64 {
    let n = prob.n();
    let mut mean = DVector::zeros(x_star.len());
    for a in &prob.agents {
        mean += a.h.gradient(x_star);
    }
    mean /= n as f64;
    let arg = x_star - mean;
    prob.agents
        .iter()
        .map(|a| (x_star - a.f.prox(1.0, &arg)).norm())
        .fold(0.0, f64::max)
}

/// Dense embedding of a distributed problem into the generic saddle
/// form on stacked vectors. `u_sqrt` is the symmetric square root of
/// `(I - W)/2`, the coupling map is its negation acting row-wise, and
/// `u_pinv` maps a dual stack produced by the distributed recursion
/// back to the saddle solver's dual coordinates.
pub struct StackedSaddle {
    pub problem: SaddleProblem,
    pub u_sqrt: DMatrix<f64>,
    pub u_pinv: DMatrix<f64>,
}

pub fn stacked_saddle(prob: &DistProblem) -> StackedSaddle {
    let n = prob.n();
    let m = (DMatrix::identity(n, n) - prob.mixing.matrix()) * 0.5;
    let eig = m.symmetric_eigen();
    let tol = 1e-12 * eig.eigenvalues.iter().fold(1.0f64, |a, &e| a.max(e.abs()));
    let sqrt_vals = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| e.max(0.0).sqrt()));
    let inv_vals = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| {
        let s = e.max(0.0).sqrt();
        if s > tol {
            1.0 / s
        } else {
            0.0
        }
    }));
    let u_sqrt = &eig.eigenvectors * sqrt_vals * eig.eigenvectors.transpose();
    let u_pinv = &eig.eigenvectors * inv_vals * eig.eigenvectors.transpose();
    let k = RowMixMap::new(-&u_sqrt, prob.dim, prob.mixing.consensus_norm(), true);
    let problem = SaddleProblem {
        g: Arc::new(ZeroProx),
        f: Arc::new(StackedProx {
            parts: prob.agents.iter().map(|a| a.f.clone()).collect(),
            d: prob.dim,
        }),
        h: Arc::new(StackedSmooth {
            parts: prob.agents.iter().map(|a| a.h.clone()).collect(),
            d: prob.dim,
        }),
        k: Arc::new(k),
    };
    StackedSaddle { problem, u_sqrt, u_pinv }
}

/// Observer that evaluates the merit function and the ergodic gap of
/// a distributed run against a reference pair `(x_hat, u_hat)`,
/// where `u_hat` is a zero-sum dual stack such as the one from
/// [`dual_certificate`]. Works through the dense embedding, so meant
/// for test-sized problems.
pub struct DistGapMonitor {
    stacked: StackedSaddle,
    monitor: GapMonitor,
    ergodic: ErgodicAccumulator,
}

impl DistGapMonitor {
    pub fn new(
        prob: &DistProblem,
        x_hat: &DVector<f64>,
        u_hat: &DMatrix<f64>,
    ) -> Result<Self, SolverError> {
        let n = prob.n();
        let d = prob.dim;
        if x_hat.len() != d || u_hat.nrows() != n || u_hat.ncols() != d {
            return Err(SolverError::DimensionMismatch { what: "reference point shapes" });
        }
        let colsum_norm = {
            let mut s = 0.0f64;
            for j in 0..d {
                let mut c = 0.0;
                for i in 0..n {
                    c += u_hat[(i, j)];
                }
                s += c * c;
            }
            s.sqrt()
        };
        if colsum_norm > 1e-8 * (1.0 + u_hat.norm()) {
            return Err(SolverError::InvalidParameter {
                what: "dual reference stack must have zero column sums".into(),
            });
        }
        let stacked = stacked_saddle(prob);
        let y_hat = stack_rows(&(&stacked.u_pinv * u_hat));
        let x_hat_stack = DVector::from_fn(n * d, |idx, _| x_hat[idx % d]);
        let monitor = GapMonitor::new(&stacked.problem, y_hat, x_hat_stack)?;
        let ergodic = ErgodicAccumulator::new(DVector::zeros(n * d), n * d);
        Ok(Self { stacked, monitor, ergodic })
    }

    pub fn saddle(&self) -> &StackedSaddle {
        &self.stacked
    }
}

impl DistObserver for DistGapMonitor {
    fn observe(
        &mut self,
        _prob: &DistProblem,
        params: &LinesearchParams,
        prev: &DistState,
        u_new: &DMatrix<f64>,
        outcome: &DistLsOutcome,
    ) -> (Option<f64>, Option<f64>) {
        let y_prev = stack_rows(&(&self.stacked.u_pinv * &prev.u));
        let y_new = stack_rows(&(&self.stacked.u_pinv * u_new));
        let v_prev = stack_rows(&prev.x);
        let fake = PdState {
            u: y_prev,
            v: v_prev.clone(),
            tau: prev.tau,
            theta: prev.theta,
            iter: prev.iter,
        };
        let phi = self.monitor.phi(&self.stacked.problem, params, &fake, &y_new);
        let y_bar = stack_rows(&(&self.stacked.u_pinv * &outcome.u_bar));
        self.ergodic.push(outcome.tau, outcome.tau / prev.tau, &y_bar, &v_prev);
        let gap = self
            .ergodic
            .averages()
            .map(|(uu, vv)| self.monitor.gap(&self.stacked.problem, &uu, &vv));
        (Some(phi), gap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{solve, DistAgent, DistMetrics, DistRunConfig, LsKind};
    use crate::graph::{MixingMatrix, Topology};
    use crate::netsim::Network;
    use crate::operators::{NonnegOrthant, Quadratic};
    use crate::saddle::{run_pd, BacktrackingLs};
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn quad(targets: &[DVector<f64>]) -> Vec<Arc<dyn SmoothOracle>> {
        targets
            .iter()
            .map(|c| {
                let d = c.len();
                Arc::new(Quadratic::new(DMatrix::identity(d, d), -c.clone()))
                    as Arc<dyn SmoothOracle>
            })
            .collect()
    }

    #[test]
    fn fd_gradient_matches_quadratic() {
        let q = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let b = dvector![0.5, -1.0];
        let h = Quadratic::new(q.clone(), b.clone());
        let x = dvector![0.7, -0.3];
        let g = fd_gradient(&h, &x, None).unwrap();
        let exact = q * &x + b;
        assert!((g - exact).norm() < 1e-6);
    }

    struct TinyDomain {
        radius: f64,
    }
    impl SmoothOracle for TinyDomain {
        fn value(&self, v: &DVector<f64>) -> f64 {
            if v.norm() < self.radius {
                v.norm_squared()
            } else {
                f64::INFINITY
            }
        }
        fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
            v * 2.0
        }
    }

    #[test]
    fn fd_gradient_shrinks_probe_once() {
        let h = TinyDomain { radius: 1e-7 };
        let x = DVector::zeros(2);
        let g = fd_gradient(&h, &x, None).unwrap();
        assert!(g.norm() < 1e-8);
    }

    #[test]
    fn fd_gradient_gives_up_outside_domain() {
        let h = TinyDomain { radius: 1e-12 };
        let x = DVector::zeros(2);
        assert!(matches!(
            fd_gradient(&h, &x, None),
            Err(SolverError::DomainViolation { .. })
        ));
    }

    #[test]
    fn centralized_solver_finds_the_mean() {
        // The sufficient-decrease test compares h values directly, so
        // residuals much below sqrt(eps * |h|) drown in rounding; 1e-7
        // stays above that floor here.
        let targets = vec![dvector![1.0, 2.0], dvector![3.0, -4.0], dvector![-1.0, 5.0]];
        let hs = quad(&targets);
        let sol = centralized_solve(&ZeroProx, &hs, &DVector::zeros(2), 1e-7, 10_000).unwrap();
        assert!((sol.x_star - dvector![1.0, 1.0]).norm() < 1e-6);
        assert!(sol.kkt_residual <= 1e-7);
    }

    #[test]
    fn the_two_centralized_methods_agree() {
        let targets = vec![dvector![-2.0, 1.0], dvector![-1.0, 3.0], dvector![-3.0, 2.0]];
        let hs = quad(&targets);
        let a = centralized_solve(&NonnegOrthant, &hs, &DVector::zeros(2), 1e-7, 20_000).unwrap();
        let b = centralized_solve_accelerated(&NonnegOrthant, &hs, &DVector::zeros(2), 1e-7, 20_000)
            .unwrap();
        // The first coordinate is pinned at zero by the constraint.
        assert!(a.x_star[0].abs() < 1e-9);
        assert!((a.x_star - b.x_star).norm() < 1e-6);
    }

    fn consensus_problem(targets: &[DVector<f64>]) -> DistProblem {
        let n = targets.len();
        let topo = if n >= 3 { Topology::ring(n) } else { Topology::path(n) };
        let mixing = MixingMatrix::metropolis(topo).unwrap();
        let d = targets[0].len();
        let agents = targets
            .iter()
            .map(|c| DistAgent {
                f: Arc::new(ZeroProx),
                h: Arc::new(Quadratic::new(DMatrix::identity(d, d), -c.clone())),
            })
            .collect();
        DistProblem { agents, mixing, dim: d }
    }

    #[test]
    fn certificate_is_zero_sum_and_tight_at_the_solution() {
        let targets = vec![dvector![1.0, 0.0], dvector![2.0, 2.0], dvector![3.0, 4.0]];
        let prob = consensus_problem(&targets);
        let x_star = dvector![2.0, 2.0];
        let u_hat = dual_certificate(&prob, &x_star);
        for j in 0..2 {
            let col: f64 = (0..3).map(|i| u_hat[(i, j)]).sum();
            assert!(col.abs() < 1e-12);
        }
        assert!(certificate_residual(&prob, &x_star) < 1e-12);
    }

    #[test]
    fn stacked_square_root_squares_back() {
        let prob = consensus_problem(&[dvector![0.0], dvector![1.0], dvector![2.0], dvector![3.0]]);
        let s = stacked_saddle(&prob);
        let n = prob.n();
        let m = (DMatrix::identity(n, n) - prob.mixing.matrix()) * 0.5;
        assert!((&s.u_sqrt * &s.u_sqrt - m).norm() < 1e-12);
        // Pseudoinverse: U+ U is the projection that kills constants.
        let proj = &s.u_pinv * &s.u_sqrt;
        let ones = DVector::from_element(n, 1.0);
        assert!((&proj * &ones).norm() < 1e-10);
        let zero_sum = dvector![1.0, -2.0, 0.5, 0.5];
        assert!((&proj * &zero_sum - &zero_sum).norm() < 1e-10);
    }

    #[test]
    fn distributed_run_tracks_the_stacked_saddle_solver() {
        let targets = vec![dvector![1.0, -1.0], dvector![3.0, 2.0]];
        let prob = consensus_problem(&targets);
        let params = LinesearchParams::new(2.0, 0.5, 0.4999, 0.95, 0.99).unwrap();
        let x1 = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, -0.5, 1.0]);
        let tau0 = 0.37;
        let iters = 30;

        let mut cfg = DistRunConfig::new(params, LsKind::Sum);
        cfg.tau0 = Some(tau0);
        cfg.max_iters = iters;
        cfg.record_iterates = true;
        let mut net = Network::new(2);
        let run = solve(&prob, &cfg, &mut net, x1.clone(), &DistMetrics::default(), None).unwrap();

        let s = stacked_saddle(&prob);
        let hist = run_pd(
            &s.problem,
            &params,
            &BacktrackingLs,
            DVector::zeros(4),
            stack_rows(&x1),
            tau0,
            iters,
        )
        .unwrap();

        for (k, it) in hist.iter().enumerate() {
            let x_dist = stack_rows(&run.iterates[k + 1]);
            assert!(
                (&it.v - &x_dist).amax() < 1e-9,
                "iteration {}: stacked and distributed drifted apart",
                k + 1
            );
            assert_relative_eq!(it.tau, run.trace.rows[k].tau, max_relative = 1e-12);
        }
    }

    #[test]
    fn gap_monitor_reports_nonincreasing_phi() {
        let targets = vec![dvector![1.0], dvector![2.0], dvector![6.0]];
        let prob = consensus_problem(&targets);
        let x_star = dvector![3.0];
        let u_hat = dual_certificate(&prob, &x_star);
        let mut mon = DistGapMonitor::new(&prob, &x_star, &u_hat).unwrap();
        let params = LinesearchParams::new(2.0, 0.5, 0.4999, 0.95, 0.99).unwrap();
        let mut cfg = DistRunConfig::new(params, LsKind::Sum);
        cfg.max_iters = 120;
        let mut net = Network::new(3);
        let run = solve(
            &prob,
            &cfg,
            &mut net,
            DMatrix::zeros(3, 1),
            &DistMetrics::default(),
            Some(&mut mon),
        )
        .unwrap();
        let phis: Vec<f64> = run.trace.rows.iter().map(|r| r.phi.unwrap()).collect();
        for w in phis.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0), "phi rose: {} -> {}", w[0], w[1]);
        }
        let gaps: Vec<f64> = run.trace.rows.iter().map(|r| r.gap.unwrap()).collect();
        for &g in &gaps {
            assert!(g >= -1e-9, "gap went negative: {g}");
        }
        assert!(gaps.last().unwrap() < &gaps[2]);
    }

    #[test]
    fn monitor_rejects_nonzero_sum_duals() {
        let prob = consensus_problem(&[dvector![1.0], dvector![2.0]]);
        let bad = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(DistGapMonitor::new(&prob, &dvector![1.5], &bad).is_err());
    }
}
