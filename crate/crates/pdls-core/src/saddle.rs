//! Primal-dual iteration with backtracking linesearch for saddle
//! problems
//!
//! ```text
//!     min_u max_v  <K u, v> + G(u) - F(v) - H(v)
//! ```
//!
//! with `G`, `F` prox-friendly convex and `H` convex differentiable with
//! a *locally* Lipschitz gradient. One step updates the primal variable
//! with a prox against `K* v`, then finds the next stepsize and dual
//! point by backtracking: a trial stepsize is accepted when the Bregman
//! gap of `H` between consecutive dual points is dominated by their
//! squared distance. The accepted stepsize may grow again from iteration
//! to iteration (up to `sqrt(1 + gamma * theta)`), so the method adapts
//! to the local curvature instead of a worst-case constant.

use nalgebra::DVector;
use std::sync::Arc;

use crate::error::SolverError;
use crate::operators::{LinearMap, ProxOracle, SmoothOracle};

/// How the per-iteration growth factor `alpha_k` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaRule {
    /// `alpha_k = sqrt(1 + gamma * theta_{k-1})`, the adaptive default.
    Adaptive,
    /// `alpha_k = 1`: stepsizes never grow, and settle eventually.
    ConstantOne,
}

/// Linesearch shape parameters, validated once at construction.
#[derive(Debug, Clone, Copy)]
pub struct LinesearchParams {
    pub beta: f64,
    pub delta_l: f64,
    pub delta_k: f64,
    pub mu: f64,
    pub gamma: f64,
    pub alpha_rule: AlphaRule,
    pub max_backtracks: usize,
}

impl LinesearchParams {
    /// `beta > 0`, `delta_l, delta_k > 0` with `delta_l + delta_k < 1`,
    /// `mu` and `gamma` in `(0, 1)` resp. `(0, 1]`. Backtrack budget
    /// defaults to 60 and the growth rule to [`AlphaRule::Adaptive`].
    pub fn new(
        beta: f64,
        delta_l: f64,
        delta_k: f64,
        mu: f64,
        gamma: f64,
    ) -> Result<Self, SolverError> {
        let bad = |what: &str| Err(SolverError::InvalidParameter { what: what.to_string() });
        if !(beta.is_finite() && beta > 0.0) {
            return bad("beta must be positive and finite");
        }
        if !(delta_l > 0.0 && delta_k > 0.0 && delta_l + delta_k < 1.0) {
            return bad("need delta_l, delta_k > 0 with delta_l + delta_k < 1");
        }
        if !(mu > 0.0 && mu < 1.0) {
            return bad("mu must lie in (0, 1)");
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        Ok(Self {
            beta,
            delta_l,
            delta_k,
            mu,
            gamma,
            alpha_rule: AlphaRule::Adaptive,
            max_backtracks: 60,
        })
    }

    pub fn with_alpha_rule(mut self, rule: AlphaRule) -> Self {
        self.alpha_rule = rule;
        self
    }

    pub fn with_max_backtracks(mut self, n: usize) -> Self {
        self.max_backtracks = n;
        self
    }

    /// Growth factor for the next trial stepsize given `theta_{k-1}`.
    pub fn alpha(&self, theta_prev: f64) -> f64 {
        match self.alpha_rule {
            AlphaRule::Adaptive => (1.0 + self.gamma * theta_prev).sqrt(),
            AlphaRule::ConstantOne => 1.0,
        }
    }
}

/// Largest stepsize the norm-aware trial rule allows:
/// `sqrt(delta_k) / (sqrt(beta) ||K||)`, infinite when `K = 0`.
///
/// Every caller (generic and distributed) funnels through this one
/// expression so equal inputs give bit-equal caps.
pub fn tau_cap(beta: f64, delta_k: f64, k_norm: f64) -> f64 {
    if k_norm == 0.0 {
        f64::INFINITY
    } else {
        delta_k.sqrt() / (beta.sqrt() * k_norm)
    }
}

/// The saddle problem data: `min_u max_v <Ku, v> + G(u) - F(v) - H(v)`.
pub struct SaddleProblem {
    pub g: Arc<dyn ProxOracle>,
    pub f: Arc<dyn ProxOracle>,
    pub h: Arc<dyn SmoothOracle>,
    pub k: Arc<dyn LinearMap>,
}

/// Solver state after completing iteration `iter`: `u` is the current
/// primal point, `v` the dual point the *next* iteration will update
/// from, `tau`/`theta` the accepted stepsize and its ratio.
#[derive(Debug, Clone)]
pub struct PdState {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub tau: f64,
    pub theta: f64,
    pub iter: usize,
}

impl PdState {
    /// Initial state: primal `u0`, dual `v1`, stepsize seed `tau0`,
    /// `theta = 1`.
    pub fn init(u0: DVector<f64>, v1: DVector<f64>, tau0: f64) -> Self {
        Self { u: u0, v: v1, tau: tau0, theta: 1.0, iter: 0 }
    }
}

/// What a linesearch hands back: accepted stepsize, the dual point it
/// produced, the extrapolated primal point used, and the shrink count.
pub struct LsOutcome {
    pub tau: f64,
    pub v_next: DVector<f64>,
    pub u_bar: DVector<f64>,
    pub backtracks: usize,
}

/// Strategy seam: how the initial trial stepsize is formed and how
/// trials are accepted. All strategies share the same trial map
/// (extrapolate, prox-gradient on the dual) and differ only in the
/// acceptance rule.
pub trait LinesearchStrategy: Send + Sync {
    /// Trial stepsize to start iteration `k` from, given `tau_{k-1}` and
    /// the growth factor `alpha_k`.
    fn initial_tau(&self, prob: &SaddleProblem, params: &LinesearchParams, tau_prev: f64, alpha: f64) -> f64;

    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        prob: &SaddleProblem,
        params: &LinesearchParams,
        tau_init: f64,
        tau_prev: f64,
        u_prev: &DVector<f64>,
        u: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<LsOutcome, SolverError>;
}

/// Rejection test of the backtracking linesearch: the trial fails when
/// the Bregman gap of `H` at the trial dual point, scaled by `tau`,
/// exceeds `delta_l / (2 beta)` times the squared dual displacement.
pub fn ls_descent_test(
    params: &LinesearchParams,
    tau: f64,
    v_old: &DVector<f64>,
    v_new: &DVector<f64>,
    h: &dyn SmoothOracle,
) -> bool {
    let dv = v_new - v_old;
    let bregman = h.value(v_new) - h.value(v_old) - h.gradient(v_old).dot(&dv);
    tau * bregman > params.delta_l / (2.0 * params.beta) * dv.norm_squared()
}

/// Shared trial map: `theta = tau/tau_prev`, `K u_bar` from cached
/// `K u`, `K u_prev`, then the dual prox-gradient step at `beta tau`.
struct TrialCtx<'a> {
    prob: &'a SaddleProblem,
    params: &'a LinesearchParams,
    tau_prev: f64,
    v: &'a DVector<f64>,
    grad_v: DVector<f64>,
    h_at_v: f64,
    ku: DVector<f64>,
    ku_prev: DVector<f64>,
}

impl<'a> TrialCtx<'a> {
    fn new(
        prob: &'a SaddleProblem,
        params: &'a LinesearchParams,
        tau_prev: f64,
        u_prev: &DVector<f64>,
        u: &DVector<f64>,
        v: &'a DVector<f64>,
    ) -> Self {
        Self {
            prob,
            params,
            tau_prev,
            v,
            grad_v: prob.h.gradient(v),
            h_at_v: prob.h.value(v),
            ku: prob.k.apply(u),
            ku_prev: prob.k.apply(u_prev),
        }
    }

    fn dual_trial(&self, tau: f64) -> DVector<f64> {
        let theta = tau / self.tau_prev;
        let k_ubar = &self.ku + (&self.ku - &self.ku_prev) * theta;
        let step = self.params.beta * tau;
        let arg = self.v + (k_ubar - &self.grad_v) * step;
        self.prob.f.prox(step, &arg)
    }

    /// Bregman gap of `H` from `v` to `v_new`; `NaN` stands for a
    /// domain violation and always rejects.
    fn bregman(&self, v_new: &DVector<f64>) -> f64 {
        let hv = self.prob.h.value(v_new);
        if !hv.is_finite() {
            return f64::NAN;
        }
        hv - self.h_at_v - self.grad_v.dot(&(v_new - self.v))
    }
}

fn extrapolate(u: &DVector<f64>, u_prev: &DVector<f64>, theta: f64) -> DVector<f64> {
    u + (u - u_prev) * theta
}

fn check_tau_init(tau_init: f64) -> Result<(), SolverError> {
    if tau_init.is_finite() && tau_init > 0.0 {
        Ok(())
    } else {
        Err(SolverError::InvalidParameter { what: format!("initial stepsize {tau_init} must be positive and finite") })
    }
}

/// Backtracking on the Bregman descent test, with the norm-aware
/// initial cap `min(tau_cap, tau_prev * alpha)`.
pub struct BacktrackingLs;

impl LinesearchStrategy for BacktrackingLs {
    fn initial_tau(&self, prob: &SaddleProblem, params: &LinesearchParams, tau_prev: f64, alpha: f64) -> f64 {
        tau_cap(params.beta, params.delta_k, prob.k.operator_norm()).min(tau_prev * alpha)
    }

    fn search(
        &self,
        prob: &SaddleProblem,
        params: &LinesearchParams,
        tau_init: f64,
        tau_prev: f64,
        u_prev: &DVector<f64>,
        u: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<LsOutcome, SolverError> {
        check_tau_init(tau_init)?;
        let ctx = TrialCtx::new(prob, params, tau_prev, u_prev, u, v);
        let mut tau = tau_init;
        let mut backtracks = 0usize;
        loop {
            let v_new = ctx.dual_trial(tau);
            let dv2 = (&v_new - v).norm_squared();
            let breg = ctx.bregman(&v_new);
            let reject = !breg.is_finite() || tau * breg > params.delta_l / (2.0 * params.beta) * dv2;
            if !reject {
                let u_bar = extrapolate(u, u_prev, tau / tau_prev);
                return Ok(LsOutcome { tau, v_next: v_new, u_bar, backtracks });
            }
            backtracks += 1;
            if backtracks > params.max_backtracks {
                return Err(SolverError::StepsizeUnderflow { agent: None, tau });
            }
            tau *= params.mu;
        }
    }
}

/// Norm-free variant: starts from `tau_prev * alpha` with no cap and
/// folds the `||K* dv||` term into the rejection test against the
/// combined budget `delta_k + delta_l`. Usable when `||K||` is unknown.
pub struct NormFreeLs;

impl LinesearchStrategy for NormFreeLs {
    fn initial_tau(&self, _prob: &SaddleProblem, _params: &LinesearchParams, tau_prev: f64, alpha: f64) -> f64 {
        tau_prev * alpha
    }

    fn search(
        &self,
        prob: &SaddleProblem,
        params: &LinesearchParams,
        tau_init: f64,
        tau_prev: f64,
        u_prev: &DVector<f64>,
        u: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<LsOutcome, SolverError> {
        check_tau_init(tau_init)?;
        let ctx = TrialCtx::new(prob, params, tau_prev, u_prev, u, v);
        let kstar_v = prob.k.adjoint(v);
        let mut tau = tau_init;
        let mut backtracks = 0usize;
        loop {
            let v_new = ctx.dual_trial(tau);
            let dv2 = (&v_new - v).norm_squared();
            let kdv2 = (prob.k.adjoint(&v_new) - &kstar_v).norm_squared();
            let breg = ctx.bregman(&v_new);
            let lhs = 0.5 * tau * tau * kdv2 + tau * breg;
            let rhs = (params.delta_k + params.delta_l) / (2.0 * params.beta) * dv2;
            let reject = !lhs.is_finite() || lhs > rhs;
            if !reject {
                let u_bar = extrapolate(u, u_prev, tau / tau_prev);
                return Ok(LsOutcome { tau, v_next: v_new, u_bar, backtracks });
            }
            backtracks += 1;
            if backtracks > params.max_backtracks {
                return Err(SolverError::StepsizeUnderflow { agent: None, tau });
            }
            tau *= params.mu;
        }
    }
}

/// Fixed stepsize: no growth, no test, one trial. The caller owns the
/// burden of choosing a stable `tau`.
pub struct ConstantStep;

impl LinesearchStrategy for ConstantStep {
    fn initial_tau(&self, _prob: &SaddleProblem, _params: &LinesearchParams, tau_prev: f64, _alpha: f64) -> f64 {
        tau_prev
    }

    fn search(
        &self,
        prob: &SaddleProblem,
        params: &LinesearchParams,
        tau_init: f64,
        tau_prev: f64,
        u_prev: &DVector<f64>,
        u: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<LsOutcome, SolverError> {
        check_tau_init(tau_init)?;
        let ctx = TrialCtx::new(prob, params, tau_prev, u_prev, u, v);
        let v_new = ctx.dual_trial(tau_init);
        let u_bar = extrapolate(u, u_prev, tau_init / tau_prev);
        Ok(LsOutcome { tau: tau_init, v_next: v_new, u_bar, backtracks: 0 })
    }
}

/// Everything one iteration produces beyond the new state.
#[derive(Debug)]
pub struct PdStep {
    pub state: PdState,
    pub u_bar: DVector<f64>,
    pub backtracks: usize,
    pub tau_init: f64,
}

/// One full iteration: primal prox against `K* v`, growth factor,
/// initial stepsize, linesearch, state advance.
pub fn pd_step(
    prob: &SaddleProblem,
    params: &LinesearchParams,
    st: &PdState,
    ls: &dyn LinesearchStrategy,
) -> Result<PdStep, SolverError> {
    let kstar_v = prob.k.adjoint(&st.v);
    let u_new = prob.g.prox(st.tau, &(&st.u - kstar_v * st.tau));
    let alpha = params.alpha(st.theta);
    let tau_init = ls.initial_tau(prob, params, st.tau, alpha);
    let out = ls.search(prob, params, tau_init, st.tau, &st.u, &u_new, &st.v)?;
    let theta = out.tau / st.tau;
    Ok(PdStep {
        state: PdState { u: u_new, v: out.v_next, tau: out.tau, theta, iter: st.iter + 1 },
        u_bar: out.u_bar,
        backtracks: out.backtracks,
        tau_init,
    })
}

/// Record of one completed iteration kept by [`run_pd`]; holds full
/// iterates, so meant for analysis-sized problems.
pub struct PdIterate {
    pub k: usize,
    pub tau: f64,
    pub tau_init: f64,
    pub theta: f64,
    pub backtracks: usize,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub u_bar: DVector<f64>,
    /// Dual point the iteration started from (`v^k`).
    pub v_in: DVector<f64>,
}

/// Drives `iters` iterations from `(u0, v1, tau0)` and returns the full
/// iterate history.
pub fn run_pd(
    prob: &SaddleProblem,
    params: &LinesearchParams,
    ls: &dyn LinesearchStrategy,
    u0: DVector<f64>,
    v1: DVector<f64>,
    tau0: f64,
    iters: usize,
) -> Result<Vec<PdIterate>, SolverError> {
    let mut st = PdState::init(u0, v1, tau0);
    let mut history = Vec::with_capacity(iters);
    for _ in 0..iters {
        let v_in = st.v.clone();
        let step = pd_step(prob, params, &st, ls)?;
        history.push(PdIterate {
            k: step.state.iter,
            tau: step.state.tau,
            tau_init: step.tau_init,
            theta: step.state.theta,
            backtracks: step.backtracks,
            u: step.state.u.clone(),
            v: step.state.v.clone(),
            u_bar: step.u_bar.clone(),
            v_in,
        });
        st = step.state;
    }
    Ok(history)
}

/// Merit and gap bookkeeping around a fixed reference saddle point
/// `(u_hat, v_hat)`.
///
/// The primal score is `G(u) - G(u_hat) + <K* v_hat, u - u_hat>`, the
/// dual score `(F + H)(v) - (F + H)(v_hat) - <K u_hat, v - v_hat>`; both
/// are nonnegative at an exact saddle point and their sum is the duality
/// gap surrogate whose ergodic decay is O(1/k).
pub struct GapMonitor {
    pub u_hat: DVector<f64>,
    pub v_hat: DVector<f64>,
    g_at_uhat: f64,
    fh_at_vhat: f64,
    kstar_vhat: DVector<f64>,
    k_uhat: DVector<f64>,
}

impl GapMonitor {
    pub fn new(prob: &SaddleProblem, u_hat: DVector<f64>, v_hat: DVector<f64>) -> Result<Self, SolverError> {
        let g_at_uhat = prob.g.value(&u_hat);
        let fh_at_vhat = prob.f.value(&v_hat) + prob.h.value(&v_hat);
        if !g_at_uhat.is_finite() || !fh_at_vhat.is_finite() {
            return Err(SolverError::DomainViolation { what: "reference point has infinite objective value" });
        }
        let kstar_vhat = prob.k.adjoint(&v_hat);
        let k_uhat = prob.k.apply(&u_hat);
        Ok(Self { u_hat, v_hat, g_at_uhat, fh_at_vhat, kstar_vhat, k_uhat })
    }

    pub fn primal_score(&self, prob: &SaddleProblem, u: &DVector<f64>) -> f64 {
        prob.g.value(u) - self.g_at_uhat + self.kstar_vhat.dot(&(u - &self.u_hat))
    }

    pub fn dual_score(&self, prob: &SaddleProblem, v: &DVector<f64>) -> f64 {
        prob.f.value(v) + prob.h.value(v) - self.fh_at_vhat - self.k_uhat.dot(&(v - &self.v_hat))
    }

    pub fn gap(&self, prob: &SaddleProblem, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        self.primal_score(prob, u) + self.dual_score(prob, v)
    }

    /// Merit value after an iteration that moved `prev` to primal
    /// `u_new`: `tau (1 + theta) Pscore(u_prev) + ||u_new - u_hat||^2 / 2 +
    /// ||v_prev - v_hat||^2 / (2 beta)` with `tau`, `theta`, `u_prev`,
    /// `v_prev` taken from `prev`. The sequence is nonincreasing along
    /// the iteration.
    pub fn phi(
        &self,
        prob: &SaddleProblem,
        params: &LinesearchParams,
        prev: &PdState,
        u_new: &DVector<f64>,
    ) -> f64 {
        prev.tau * (1.0 + prev.theta) * self.primal_score(prob, &prev.u)
            + 0.5 * (u_new - &self.u_hat).norm_squared()
            + (&prev.v - &self.v_hat).norm_squared() / (2.0 * params.beta)
    }
}

/// Running weighted averages of the extrapolated primal points and the
/// incoming dual points, the iterates with the O(1/k) gap guarantee.
pub struct ErgodicAccumulator {
    u0: DVector<f64>,
    acc_u: DVector<f64>,
    acc_v: DVector<f64>,
    s: f64,
    tau1_theta1: Option<f64>,
    tau1: f64,
}

impl ErgodicAccumulator {
    pub fn new(u0: DVector<f64>, v_dim: usize) -> Self {
        let dim = u0.len();
        Self {
            u0,
            acc_u: DVector::zeros(dim),
            acc_v: DVector::zeros(v_dim),
            s: 0.0,
            tau1_theta1: None,
            tau1: 0.0,
        }
    }

    /// Feed iteration `k`'s accepted `tau`, ratio `theta`, extrapolated
    /// primal `u_bar` and the dual point `v` the iteration started from.
    pub fn push(&mut self, tau: f64, theta: f64, u_bar: &DVector<f64>, v: &DVector<f64>) {
        if self.tau1_theta1.is_none() {
            self.tau1_theta1 = Some(tau * theta);
            self.tau1 = tau;
        }
        self.acc_u += u_bar * tau;
        self.acc_v += v * tau;
        self.s += tau;
    }

    /// `(U^K, V^K)`; `None` before the first push.
    pub fn averages(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        let tau1_theta1 = self.tau1_theta1?;
        let u = (&self.u0 * self.tau1 + &self.acc_u) / (tau1_theta1 + self.s);
        let v = &self.acc_v / self.s;
        Some((u, v))
    }
}
