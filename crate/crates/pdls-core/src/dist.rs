//! Distributed proximal splitting over a mixing matrix.
//!
//! `n` agents jointly minimize `sum_i f_i(x) + h_i(x)`. Each agent
//! holds a row of the stacked state: a primal block `x_i` and a dual
//! block `u_i` that accumulates scaled disagreement. One outer
//! iteration performs a single neighbor exchange for the dual update,
//! then a linesearch whose trials are prox-gradient steps; the
//! linesearch variants differ in how agents agree on the accepted
//! stepsize (a summed test, a per-agent minimum, or their
//! neighbor-weighted versions that avoid the global mixing norm).
//! All cross-agent traffic goes through [`Network`] so communication
//! tallies are exact.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::SolverError;
use crate::graph::MixingMatrix;
use crate::netsim::Network;
use crate::operators::{ProxOracle, SmoothOracle};
use crate::par;
use crate::saddle::{tau_cap, LinesearchParams};
use crate::trace::{SolverTrace, TraceRow};

pub struct DistAgent {
    pub f: Arc<dyn ProxOracle>,
    pub h: Arc<dyn SmoothOracle>,
}

pub struct DistProblem {
    pub agents: Vec<DistAgent>,
    pub mixing: MixingMatrix,
    /// Length of each agent's primal block.
    pub dim: usize,
}

impl DistProblem {
    pub fn n(&self) -> usize {
        self.agents.len()
    }

    /// `sum_i (f_i + h_i)(x_i)` over the rows of `x`.
    pub fn objective(&self, x: &DMatrix<f64>) -> f64 {
        (0..self.n())
            .map(|i| {
                let xi = row(x, i);
                self.agents[i].f.value(&xi) + self.agents[i].h.value(&xi)
            })
            .sum()
    }
}

/// State entering an outer iteration: `x` is the current primal
/// stack, `u` the dual stack left by the previous iteration, `tau`
/// and `theta` the accepted stepsize and its last ratio.
#[derive(Debug, Clone)]
pub struct DistState {
    pub x: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub tau: f64,
    pub theta: f64,
    pub iter: usize,
}

impl DistState {
    pub fn init(x1: DMatrix<f64>, tau0: f64) -> Self {
        let u = DMatrix::zeros(x1.nrows(), x1.ncols());
        Self { x: x1, u, tau: tau0, theta: 1.0, iter: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsKind {
    /// Shared test on the sum of local slacks; one `allreduce_sum`
    /// per trial.
    Sum,
    /// Independent per-agent backtracking, then a single
    /// `allreduce_min` to agree on the smallest accepted stepsize.
    Min,
    /// Fixed stepsize, no test.
    Constant,
    /// Like `Sum` but with a neighbor-weighted curvature term in the
    /// test, so no bound on the mixing norm is needed.
    SumW,
    /// Like `Min` with the neighbor-weighted term; trials run in
    /// lockstep rounds because each test needs a neighbor exchange.
    MinW,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged { iter: usize },
    IterationCap,
}

pub struct DistRunConfig {
    pub params: LinesearchParams,
    pub kind: LsKind,
    /// Initial stepsize. `None` picks a tenth of the stepsize cap,
    /// which requires a connected graph with more than one agent;
    /// `Constant` always needs an explicit value.
    pub tau0: Option<f64>,
    pub max_iters: usize,
    /// Threshold on `max(step norm, consensus residual)`, both
    /// unnormalized Frobenius norms. Zero disables early stopping.
    pub eps: f64,
    /// Agents with a known gradient Lipschitz constant, `(index, L)`.
    /// Only consulted by `Min`: listed agents take the safe stepsize
    /// without testing.
    pub lipschitz: Vec<(usize, f64)>,
    /// Keep every primal stack; `iterates[0]` is the starting point.
    pub record_iterates: bool,
}

impl DistRunConfig {
    pub fn new(params: LinesearchParams, kind: LsKind) -> Self {
        Self {
            params,
            kind,
            tau0: None,
            max_iters: 1000,
            eps: 0.0,
            lipschitz: Vec::new(),
            record_iterates: false,
        }
    }
}

/// Reference point used for trace columns only. `x_star` is the
/// common minimizer each agent is compared against; `delta_scale`
/// divides the step-norm column (typically the distance from the
/// start to the truth).
#[derive(Default, Clone)]
pub struct DistMetrics {
    pub x_star: Option<DVector<f64>>,
    pub delta_scale: Option<f64>,
}

/// Accepted linesearch result. `backtracks[i]` counts rejected
/// trials at agent `i`; `evals[i]` counts prox-gradient evaluations
/// including any recompute at the agreed stepsize; `sync_rounds` is
/// the number of lockstep prox-gradient rounds the iteration costs.
pub struct DistLsOutcome {
    pub tau: f64,
    pub x_next: DMatrix<f64>,
    pub u_bar: DMatrix<f64>,
    pub backtracks: Vec<u32>,
    pub evals: Vec<u32>,
    pub recomputed: Vec<bool>,
    pub sync_rounds: u64,
}

/// Everything an iteration's linesearch reads, as per-agent rows.
/// `u` is the freshly updated dual stack, `u_prev` the one before it;
/// `grads` and `h_at_x` are each `h_i` evaluated at `x_i`.
pub struct LsInput<'a> {
    pub tau_init: f64,
    pub tau_prev: f64,
    pub x: &'a [DVector<f64>],
    pub u: &'a [DVector<f64>],
    pub u_prev: &'a [DVector<f64>],
    pub grads: &'a [DVector<f64>],
    pub h_at_x: &'a [f64],
}

pub fn row(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    m.row(i).transpose()
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    (0..m.nrows()).map(|i| row(m, i)).collect()
}

fn rows_to_matrix(rows: &[DVector<f64>], d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j])
}

/// `u + (tau/2) (I - W) x`, computed with one neighbor exchange.
pub fn dual_update(
    net: &mut Network,
    w: &MixingMatrix,
    x: &DMatrix<f64>,
    u: &DMatrix<f64>,
    tau: f64,
) -> Result<DMatrix<f64>, SolverError> {
    let mixed = net.neighbor_mix(w, x)?;
    Ok(u + (x - mixed) * (0.5 * tau))
}

/// One agent's prox-gradient trial at stepsize `tau`, plus the
/// quantities every acceptance test is built from.
struct AgentTrial {
    x_next: DVector<f64>,
    u_bar: DVector<f64>,
    dx: DVector<f64>,
    dx2: f64,
    /// `h(x_next) - h(x) - <grad h(x), dx>`; NaN when `x_next` left
    /// the domain of `h`, which every test treats as a rejection.
    breg: f64,
}

#[allow(clippy::too_many_arguments)]
fn agent_trial(
    agent: &DistAgent,
    beta: f64,
    tau: f64,
    tau_prev: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    u_prev: &DVector<f64>,
    grad: &DVector<f64>,
    h_at_x: f64,
) -> AgentTrial {
    let theta = tau / tau_prev;
    let u_bar = u + (u - u_prev) * theta;
    let step = beta * tau;
    let x_next = agent.f.prox(step, &(x - (&u_bar + grad) * step));
    let dx = &x_next - x;
    let dx2 = dx.norm_squared();
    let hv = agent.h.value(&x_next);
    let breg = if hv.is_finite() { hv - h_at_x - grad.dot(&dx) } else { f64::NAN };
    AgentTrial { x_next, u_bar, dx, dx2, breg }
}

fn check_tau(tau: f64) -> Result<(), SolverError> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(SolverError::InvalidParameter { what: format!("initial stepsize must be positive and finite, got {tau}") })
    }
}

fn outcome_from_trials(
    trials: Vec<AgentTrial>,
    dim: usize,
    tau: f64,
    backtracks: Vec<u32>,
    evals: Vec<u32>,
    recomputed: Vec<bool>,
    sync_rounds: u64,
) -> DistLsOutcome {
    let xs: Vec<DVector<f64>> = trials.iter().map(|t| t.x_next.clone()).collect();
    let ubars: Vec<DVector<f64>> = trials.iter().map(|t| t.u_bar.clone()).collect();
    DistLsOutcome {
        tau,
        x_next: rows_to_matrix(&xs, dim),
        u_bar: rows_to_matrix(&ubars, dim),
        backtracks,
        evals,
        recomputed,
        sync_rounds,
    }
}

/// Shared-test linesearch: accept when the summed local slacks are
/// nonpositive. All agents run the same number of trials; each trial
/// costs one `allreduce_sum` and one prox-gradient round.
pub fn ls_sum(
    prob: &DistProblem,
    params: &LinesearchParams,
    net: &mut Network,
    inp: &LsInput,
) -> Result<DistLsOutcome, SolverError> {
    check_tau(inp.tau_init)?;
    let n = prob.n();
    let half_l = params.delta_l / (2.0 * params.beta);
    let mut tau = inp.tau_init;
    for bt in 0..=params.max_backtracks {
        let trials = par::map_agents(n, |i| {
            agent_trial(
                &prob.agents[i],
                params.beta,
                tau,
                inp.tau_prev,
                &inp.x[i],
                &inp.u[i],
                &inp.u_prev[i],
                &inp.grads[i],
                inp.h_at_x[i],
            )
        });
        let locals: Vec<f64> = trials.iter().map(|t| tau * t.breg - half_l * t.dx2).collect();
        let total = net.allreduce_sum(&locals)?;
        if total <= 0.0 {
            let rounds = bt as u64 + 1;
            return Ok(outcome_from_trials(
                trials,
                prob.dim,
                tau,
                vec![bt as u32; n],
                vec![bt as u32 + 1; n],
                vec![false; n],
                rounds,
            ));
        }
        tau *= params.mu;
    }
    Err(SolverError::StepsizeUnderflow { agent: None, tau })
}

/// Per-agent linesearch followed by one `allreduce_min`. Wrapper for
/// [`ls_min_lipschitz`] with no listed constants.
pub fn ls_min(
    prob: &DistProblem,
    params: &LinesearchParams,
    net: &mut Network,
    inp: &LsInput,
) -> Result<DistLsOutcome, SolverError> {
    ls_min_lipschitz(prob, params, net, inp, &[])
}

/// Per-agent linesearch where agents listed in `lip` skip the test:
/// the shared starting stepsize is clipped to the safe value
/// `delta_l / (beta L)` for every listed `L`, which those agents
/// accept after a single evaluation. After local acceptance one
/// `allreduce_min` fixes the iteration stepsize; agents whose local
/// stepsize is larger recompute their step at the agreed value.
pub fn ls_min_lipschitz(
    prob: &DistProblem,
    params: &LinesearchParams,
    net: &mut Network,
    inp: &LsInput,
    lip: &[(usize, f64)],
) -> Result<DistLsOutcome, SolverError> {
    check_tau(inp.tau_init)?;
    let n = prob.n();
    let mut listed = vec![false; n];
    let mut tau_start = inp.tau_init;
    for &(i, l) in lip {
        if i >= n {
            return Err(SolverError::InvalidParameter { what: format!("lipschitz entry for agent {i} out of range (n = {n})") });
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(SolverError::InvalidParameter { what: format!("lipschitz constant for agent {i} must be positive and finite, got {l}") });
        }
        listed[i] = true;
        tau_start = tau_start.min(params.delta_l / (params.beta * l));
    }
    let half_l = params.delta_l / (2.0 * params.beta);

    struct Local {
        tau: f64,
        trial: AgentTrial,
        backtracks: u32,
    }
    let locals: Vec<Result<Local, SolverError>> = par::map_agents(n, |i| {
        let mut tau = tau_start;
        let run = |t: f64| {
            agent_trial(
                &prob.agents[i],
                params.beta,
                t,
                inp.tau_prev,
                &inp.x[i],
                &inp.u[i],
                &inp.u_prev[i],
                &inp.grads[i],
                inp.h_at_x[i],
            )
        };
        if listed[i] {
            return Ok(Local { tau, trial: run(tau), backtracks: 0 });
        }
        for bt in 0..=params.max_backtracks {
            let trial = run(tau);
            let slack = tau * trial.breg - half_l * trial.dx2;
            if slack <= 0.0 {
                return Ok(Local { tau, trial, backtracks: bt as u32 });
            }
            tau *= params.mu;
        }
        Err(SolverError::StepsizeUnderflow { agent: Some(i), tau })
    });
    let mut accepted = Vec::with_capacity(n);
    for r in locals {
        accepted.push(r?);
    }

    let taus: Vec<f64> = accepted.iter().map(|a| a.tau).collect();
    let tau = net.allreduce_min(&taus)?;

    // Agents that accepted a larger stepsize redo their step at the
    // agreed one; an exact tie means the step is already correct.
    let needs = |a: &Local| a.tau > tau;
    let any_recompute = accepted.iter().any(needs);
    let final_trials: Vec<AgentTrial> = par::map_agents(n, |i| {
        let a = &accepted[i];
        if needs(a) {
            agent_trial(
                &prob.agents[i],
                params.beta,
                tau,
                inp.tau_prev,
                &inp.x[i],
                &inp.u[i],
                &inp.u_prev[i],
                &inp.grads[i],
                inp.h_at_x[i],
            )
        } else {
            AgentTrial {
                x_next: a.trial.x_next.clone(),
                u_bar: a.trial.u_bar.clone(),
                dx: a.trial.dx.clone(),
                dx2: a.trial.dx2,
                breg: a.trial.breg,
            }
        }
    });
    let backtracks: Vec<u32> = accepted.iter().map(|a| a.backtracks).collect();
    let recomputed: Vec<bool> = accepted.iter().map(needs).collect();
    let evals: Vec<u32> = accepted
        .iter()
        .zip(&recomputed)
        .map(|(a, &r)| a.backtracks + 1 + r as u32)
        .collect();
    let rounds = backtracks.iter().map(|&b| b as u64 + 1).max().unwrap_or(1) + any_recompute as u64;
    Ok(outcome_from_trials(final_trials, prob.dim, tau, backtracks, evals, recomputed, rounds))
}

fn w_term(trial: &AgentTrial, wdx: &DVector<f64>) -> f64 {
    trial.dx2 - wdx.dot(&trial.dx)
}

/// Shared-test linesearch with the neighbor-weighted curvature term,
/// so the starting stepsize needs no cap from the mixing norm. Each
/// trial costs one neighbor exchange plus one `allreduce_sum`.
pub fn ls_sum_w(
    prob: &DistProblem,
    params: &LinesearchParams,
    net: &mut Network,
    inp: &LsInput,
) -> Result<DistLsOutcome, SolverError> {
    check_tau(inp.tau_init)?;
    let n = prob.n();
    let half_kl = (params.delta_k + params.delta_l) / (2.0 * params.beta);
    let mut tau = inp.tau_init;
    for bt in 0..=params.max_backtracks {
        let trials = par::map_agents(n, |i| {
            agent_trial(
                &prob.agents[i],
                params.beta,
                tau,
                inp.tau_prev,
                &inp.x[i],
                &inp.u[i],
                &inp.u_prev[i],
                &inp.grads[i],
                inp.h_at_x[i],
            )
        });
        let deltas: Vec<DVector<f64>> = trials.iter().map(|t| t.dx.clone()).collect();
        let mixed = net.neighbor_mix(&prob.mixing, &rows_to_matrix(&deltas, prob.dim))?;
        let locals: Vec<f64> = trials
            .iter()
            .enumerate()
            .map(|(i, t)| {
                0.25 * tau * tau * w_term(t, &row(&mixed, i)) + tau * t.breg - half_kl * t.dx2
            })
            .collect();
        let total = net.allreduce_sum(&locals)?;
        if total <= 0.0 {
            let rounds = bt as u64 + 1;
            return Ok(outcome_from_trials(
                trials,
                prob.dim,
                tau,
                vec![bt as u32; n],
                vec![bt as u32 + 1; n],
                vec![false; n],
                rounds,
            ));
        }
        tau *= params.mu;
    }
    Err(SolverError::StepsizeUnderflow { agent: None, tau })
}

/// Per-agent linesearch with the neighbor-weighted term. Because each
/// test needs the neighbors' trial displacements, trials run in
/// lockstep rounds: agents that already accepted keep republishing
/// their frozen displacement while the rest keep shrinking. One
/// `allreduce_min` then fixes the stepsize as in [`ls_min`].
pub fn ls_min_w(
    prob: &DistProblem,
    params: &LinesearchParams,
    net: &mut Network,
    inp: &LsInput,
) -> Result<DistLsOutcome, SolverError> {
    check_tau(inp.tau_init)?;
    let n = prob.n();
    let half_kl = (params.delta_k + params.delta_l) / (2.0 * params.beta);

    struct Local {
        tau: f64,
        trial: Option<AgentTrial>,
        accepted: bool,
        backtracks: u32,
        evals: u32,
    }
    let mut locals: Vec<Local> = (0..n)
        .map(|_| Local { tau: inp.tau_init, trial: None, accepted: false, backtracks: 0, evals: 0 })
        .collect();
    let mut rounds: u64 = 0;
    while locals.iter().any(|l| !l.accepted) {
        rounds += 1;
        let fresh: Vec<Option<AgentTrial>> = par::map_agents(n, |i| {
            if locals[i].accepted {
                None
            } else {
                Some(agent_trial(
                    &prob.agents[i],
                    params.beta,
                    locals[i].tau,
                    inp.tau_prev,
                    &inp.x[i],
                    &inp.u[i],
                    &inp.u_prev[i],
                    &inp.grads[i],
                    inp.h_at_x[i],
                ))
            }
        });
        for (l, f) in locals.iter_mut().zip(fresh) {
            if let Some(t) = f {
                l.trial = Some(t);
                l.evals += 1;
            }
        }
        let deltas: Vec<DVector<f64>> =
            locals.iter().map(|l| l.trial.as_ref().expect("trial set above").dx.clone()).collect();
        let mixed = net.neighbor_mix(&prob.mixing, &rows_to_matrix(&deltas, prob.dim))?;
        for (i, l) in locals.iter_mut().enumerate() {
            if l.accepted {
                continue;
            }
            let t = l.trial.as_ref().expect("trial set above");
            let slack = 0.25 * l.tau * l.tau * w_term(t, &row(&mixed, i)) + l.tau * t.breg
                - half_kl * t.dx2;
            if slack <= 0.0 {
                l.accepted = true;
            } else {
                if l.backtracks as usize >= params.max_backtracks {
                    return Err(SolverError::StepsizeUnderflow { agent: Some(i), tau: l.tau * params.mu });
                }
                l.backtracks += 1;
                l.tau *= params.mu;
            }
        }
    }

    let taus: Vec<f64> = locals.iter().map(|l| l.tau).collect();
    let tau = net.allreduce_min(&taus)?;
    let needs: Vec<bool> = locals.iter().map(|l| l.tau > tau).collect();
    let any_recompute = needs.iter().any(|&b| b);
    let final_trials: Vec<AgentTrial> = par::map_agents(n, |i| {
        if needs[i] {
            agent_trial(
                &prob.agents[i],
                params.beta,
                tau,
                inp.tau_prev,
                &inp.x[i],
                &inp.u[i],
                &inp.u_prev[i],
                &inp.grads[i],
                inp.h_at_x[i],
            )
        } else {
            let t = locals[i].trial.as_ref().expect("accepted trial");
            AgentTrial {
                x_next: t.x_next.clone(),
                u_bar: t.u_bar.clone(),
                dx: t.dx.clone(),
                dx2: t.dx2,
                breg: t.breg,
            }
        }
    });
    let backtracks: Vec<u32> = locals.iter().map(|l| l.backtracks).collect();
    let evals: Vec<u32> =
        locals.iter().zip(&needs).map(|(l, &r)| l.evals + r as u32).collect();
    Ok(outcome_from_trials(
        final_trials,
        prob.dim,
        tau,
        backtracks,
        evals,
        needs,
        rounds + any_recompute as u64,
    ))
}

/// Fixed-stepsize step: one prox-gradient round, no collectives.
pub fn constant_step(
    prob: &DistProblem,
    params: &LinesearchParams,
    inp: &LsInput,
) -> Result<DistLsOutcome, SolverError> {
    check_tau(inp.tau_init)?;
    let n = prob.n();
    let tau = inp.tau_init;
    let trials = par::map_agents(n, |i| {
        agent_trial(
            &prob.agents[i],
            params.beta,
            tau,
            inp.tau_prev,
            &inp.x[i],
            &inp.u[i],
            &inp.u_prev[i],
            &inp.grads[i],
            inp.h_at_x[i],
        )
    });
    Ok(outcome_from_trials(trials, prob.dim, tau, vec![0; n], vec![1; n], vec![false; n], 1))
}

/// Observer hook called once per accepted iteration; the return pair
/// lands in the `phi` and `gap` trace columns.
pub trait DistObserver {
    fn observe(
        &mut self,
        prob: &DistProblem,
        params: &LinesearchParams,
        prev: &DistState,
        u_new: &DMatrix<f64>,
        outcome: &DistLsOutcome,
    ) -> (Option<f64>, Option<f64>);
}

pub struct DistRun {
    pub state: DistState,
    pub trace: SolverTrace,
    pub stop: StopReason,
    pub iterates: Vec<DMatrix<f64>>,
}

fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

fn rel_err_stats(x: &DMatrix<f64>, x_star: &DVector<f64>) -> (f64, f64) {
    let n = x.nrows();
    let denom = x_star.norm().max(f64::MIN_POSITIVE);
    let errs: Vec<f64> = (0..n).map(|i| (row(x, i) - x_star).norm() / denom).collect();
    let mean = errs.iter().sum::<f64>() / n as f64;
    let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

fn solver_name(kind: LsKind) -> &'static str {
    match kind {
        LsKind::Sum => "alg2_sum",
        LsKind::Min => "alg2_min",
        LsKind::Constant => "alg2_const",
        LsKind::SumW => "alg2_sum_w",
        LsKind::MinW => "alg2_min_w",
    }
}

/// Runs the distributed method from `x1` until the stopping test
/// `max(||x_next - x||, ||(I - W) x||) < eps` or the iteration cap.
pub fn solve(
    prob: &DistProblem,
    cfg: &DistRunConfig,
    net: &mut Network,
    x1: DMatrix<f64>,
    metrics: &DistMetrics,
    mut observer: Option<&mut dyn DistObserver>,
) -> Result<DistRun, SolverError> {
    let n = prob.n();
    if x1.nrows() != n || x1.ncols() != prob.dim {
        return Err(SolverError::DimensionMismatch { what: "starting point rows/cols" });
    }
    if net.n() != n || prob.mixing.n() != n {
        return Err(SolverError::DimensionMismatch { what: "network size" });
    }
    let cap = tau_cap(cfg.params.beta, cfg.params.delta_k, prob.mixing.consensus_norm());
    let tau0 = match (cfg.tau0, cfg.kind) {
        (Some(t), _) => t,
        (None, LsKind::Constant) => {
            return Err(SolverError::InvalidParameter { what: "constant stepsize runs need an explicit tau0".into() })
        }
        (None, _) => 0.1 * cap,
    };
    check_tau(tau0)?;

    let i_minus_w = DMatrix::identity(n, n) - prob.mixing.matrix();
    let mut st = DistState::init(x1, tau0);
    let mut trace = SolverTrace::new(solver_name(cfg.kind));
    let mut iterates = Vec::new();
    if cfg.record_iterates {
        iterates.push(st.x.clone());
    }
    let mut prox_rounds: u64 = 0;
    let mut stop = StopReason::IterationCap;

    for k in 1..=cfg.max_iters {
        if !all_finite(&st.x) {
            return Err(SolverError::Diverged { iter: k, norm: st.x.norm() });
        }
        let u_new = dual_update(net, &prob.mixing, &st.x, &st.u, st.tau)?;

        let xs = matrix_rows(&st.x);
        let grads: Vec<DVector<f64>> =
            par::map_agents(n, |i| prob.agents[i].h.gradient(&xs[i]));
        let h_at_x: Vec<f64> = par::map_agents(n, |i| prob.agents[i].h.value(&xs[i]));
        let us = matrix_rows(&u_new);
        let u_prevs = matrix_rows(&st.u);

        let alpha = cfg.params.alpha(st.theta);
        let tau_init = match cfg.kind {
            LsKind::Sum | LsKind::Min => cap.min(st.tau * alpha),
            LsKind::SumW | LsKind::MinW => st.tau * alpha,
            LsKind::Constant => st.tau,
        };
        let inp = LsInput {
            tau_init,
            tau_prev: st.tau,
            x: &xs,
            u: &us,
            u_prev: &u_prevs,
            grads: &grads,
            h_at_x: &h_at_x,
        };
        let outcome = match cfg.kind {
            LsKind::Sum => ls_sum(prob, &cfg.params, net, &inp)?,
            LsKind::Min => ls_min_lipschitz(prob, &cfg.params, net, &inp, &cfg.lipschitz)?,
            LsKind::Constant => constant_step(prob, &cfg.params, &inp)?,
            LsKind::SumW => ls_sum_w(prob, &cfg.params, net, &inp)?,
            LsKind::MinW => ls_min_w(prob, &cfg.params, net, &inp)?,
        };
        prox_rounds += outcome.sync_rounds;

        let step_norm = (&outcome.x_next - &st.x).norm();
        let feas = (&i_minus_w * &st.x).norm();
        let (phi, gap) = match observer.as_deref_mut() {
            Some(o) => o.observe(prob, &cfg.params, &st, &u_new, &outcome),
            None => (None, None),
        };
        let (rel_mean, rel_std) = match &metrics.x_star {
            Some(xs) => {
                let (m, s) = rel_err_stats(&outcome.x_next, xs);
                (Some(m), Some(s))
            }
            None => (None, None),
        };
        let t = net.tallies();
        trace.rows.push(TraceRow {
            k,
            prox_grad_rounds: prox_rounds,
            neighbor_rounds: t.neighbor_rounds,
            allreduce_sum: t.allreduce_sum_calls,
            allreduce_min: t.allreduce_min_calls,
            tau: outcome.tau,
            backtracks: outcome.backtracks.clone(),
            delta_x: step_norm / metrics.delta_scale.unwrap_or(1.0),
            feasibility: feas,
            rel_err_mean: rel_mean,
            rel_err_std: rel_std,
            phi,
            gap,
        });

        let theta = outcome.tau / st.tau;
        st = DistState { x: outcome.x_next, u: u_new, tau: outcome.tau, theta, iter: k };
        if cfg.record_iterates {
            iterates.push(st.x.clone());
        }
        if cfg.eps > 0.0 && step_norm.max(feas) < cfg.eps {
            stop = StopReason::Converged { iter: k };
            break;
        }
    }
    Ok(DistRun { state: st, trace, stop, iterates })
}

/// Baseline method with a fixed stepsize `sigma`: one neighbor
/// exchange and one prox-gradient round per iteration, no
/// collectives. Aborts when the primal stack leaves a large ball,
/// since nothing else guards against a bad stepsize.
#[allow(clippy::too_many_arguments)]
pub fn pg_extra(
    prob: &DistProblem,
    net: &mut Network,
    x1: DMatrix<f64>,
    sigma: f64,
    max_iters: usize,
    eps: f64,
    metrics: &DistMetrics,
    record_iterates: bool,
) -> Result<DistRun, SolverError> {
    let n = prob.n();
    if x1.nrows() != n || x1.ncols() != prob.dim {
        return Err(SolverError::DimensionMismatch { what: "starting point rows/cols" });
    }
    check_tau(sigma)?;
    let i_minus_w = DMatrix::identity(n, n) - prob.mixing.matrix();
    let prox_rows = |w: &DMatrix<f64>| -> DMatrix<f64> {
        let rows: Vec<DVector<f64>> =
            par::map_agents(n, |i| prob.agents[i].f.prox(sigma, &row(w, i)));
        rows_to_matrix(&rows, prob.dim)
    };
    let grad_rows = |x: &DMatrix<f64>| -> DMatrix<f64> {
        let rows: Vec<DVector<f64>> =
            par::map_agents(n, |i| prob.agents[i].h.gradient(&row(x, i)));
        rows_to_matrix(&rows, prob.dim)
    };

    let mut trace = SolverTrace::new("pgextra_const");
    let mut iterates = Vec::new();
    let mut stop = StopReason::IterationCap;
    let mut x = x1;
    if record_iterates {
        iterates.push(x.clone());
    }
    let mut w_state = DMatrix::zeros(n, prob.dim);
    let mut grad_prev = DMatrix::zeros(n, prob.dim);
    let mut mix_prev = DMatrix::zeros(n, prob.dim);
    let mut x_prev = DMatrix::zeros(n, prob.dim);
    let mut iters = 0;

    for k in 1..=max_iters {
        if !all_finite(&x) || x.norm() > 1e12 {
            return Err(SolverError::Diverged { iter: k, norm: x.norm() });
        }
        let grad = grad_rows(&x);
        let mixed = net.neighbor_mix(&prob.mixing, &x)?;
        w_state = if k == 1 {
            &mixed - &grad * sigma
        } else {
            &w_state + &mixed - (&mix_prev + &x_prev) * 0.5 - (&grad - &grad_prev) * sigma
        };
        let x_next = prox_rows(&w_state);

        let step_norm = (&x_next - &x).norm();
        let feas = (&i_minus_w * &x).norm();
        let (rel_mean, rel_std) = match &metrics.x_star {
            Some(xs) => {
                let (m, s) = rel_err_stats(&x_next, xs);
                (Some(m), Some(s))
            }
            None => (None, None),
        };
        let t = net.tallies();
        trace.rows.push(TraceRow {
            k,
            prox_grad_rounds: k as u64,
            neighbor_rounds: t.neighbor_rounds,
            allreduce_sum: t.allreduce_sum_calls,
            allreduce_min: t.allreduce_min_calls,
            tau: sigma,
            backtracks: vec![0; n],
            delta_x: step_norm / metrics.delta_scale.unwrap_or(1.0),
            feasibility: feas,
            rel_err_mean: rel_mean,
            rel_err_std: rel_std,
            phi: None,
            gap: None,
        });

        mix_prev = mixed;
        grad_prev = grad;
        x_prev = std::mem::replace(&mut x, x_next);
        iters = k;
        if record_iterates {
            iterates.push(x.clone());
        }
        if eps > 0.0 && step_norm.max(feas) < eps {
            stop = StopReason::Converged { iter: k };
            break;
        }
    }
    let state = DistState {
        u: DMatrix::zeros(n, prob.dim),
        x,
        tau: sigma,
        theta: 1.0,
        iter: iters,
    };
    Ok(DistRun { state, trace, stop, iterates })
}
