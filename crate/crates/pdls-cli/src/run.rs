//! `run` subcommand: build one instance, run every selected solver
//! on it, write a trace CSV and a summary JSON per solver.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use pdls_core::dist::{
    pg_extra, solve, DistAgent, DistMetrics, DistProblem, DistRun, DistRunConfig, StopReason,
};
use pdls_core::error::SolverError;
use pdls_core::graph::{MixingMatrix, Topology};
use pdls_core::netsim::Network;
use pdls_core::operators::{NonnegOrthant, Quadratic};
use pdls_core::problems::{covariance, io, poisson};
use pdls_core::saddle::tau_cap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ExperimentKind, Resolved, SolverId, TopologyKind};
use crate::Failure;

/// Shared instance all solvers run on.
struct Workbench {
    prob: DistProblem,
    x1: DMatrix<f64>,
    metrics: DistMetrics,
    consensus_norm: f64,
    /// `(side, ground truth)` when the state rows are images.
    image: Option<(usize, DVector<f64>)>,
}

fn build_topology(r: &Resolved) -> Result<Topology, Failure> {
    let n = r.n_agents();
    Ok(match r.topology {
        TopologyKind::Ring => Topology::ring(n),
        TopologyKind::Path => Topology::path(n),
        TopologyKind::Complete => Topology::complete(n),
        TopologyKind::Star => Topology::star(n),
        TopologyKind::RandomGeometric => {
            Topology::random_geometric(n, r.file.topology.seed.unwrap())
        }
    })
}

fn build_workbench(r: &Resolved) -> Result<Workbench, Failure> {
    let topo = build_topology(r)?;
    let mixing = MixingMatrix::metropolis(topo)
        .map_err(|e| Failure::Config(format!("topology: {e}")))?;
    let consensus_norm = mixing.consensus_norm();
    let p = &r.file.problem;
    let seed = r.file.experiment.seed;

    Ok(match r.experiment {
        ExperimentKind::Poisson => {
            let cfg = poisson::PoissonConfig {
                side: p.side.unwrap(),
                n_agents: p.n_agents.unwrap(),
                peak: p.peak.unwrap(),
                background: p.background.unwrap(),
                zero_noise: p.zero_noise.unwrap(),
                seed,
            };
            let inst = poisson::build(&cfg);
            let x1 = poisson::starting_point(&inst);
            let metrics = DistMetrics { x_star: Some(inst.x_true.clone()), delta_scale: None };
            let image = Some((inst.side, inst.x_true.clone()));
            let prob = poisson::dist_problem(&inst, mixing, p.lambda.unwrap());
            Workbench { prob, x1, metrics, consensus_norm, image }
        }
        ExperimentKind::Covariance => {
            let cfg = covariance::CovarianceConfig {
                dim: p.dim.unwrap(),
                n_agents: p.n_agents.unwrap(),
                samples_per_agent: p.samples_per_agent.unwrap(),
                lower: p.lower.unwrap(),
                upper: p.upper.unwrap(),
                sparsity: p.sparsity.unwrap(),
                seed,
            };
            let inst = covariance::build(&cfg);
            let x1 = covariance::starting_point(&inst, cfg.n_agents);
            // Trace rel-error columns measure distance to the planted
            // precision matrix, row-major like the state rows.
            let flat = inst.precision.transpose();
            let x_star = DVector::from_column_slice(flat.as_slice());
            let metrics = DistMetrics { x_star: Some(x_star), delta_scale: None };
            let prob = covariance::dist_problem(&inst, mixing);
            Workbench { prob, x1, metrics, consensus_norm, image: None }
        }
        ExperimentKind::Custom => {
            let (prob, x1) = quad_consensus(p.n_agents.unwrap(), p.dim.unwrap(), seed, mixing);
            Workbench { prob, x1, metrics: DistMetrics::default(), consensus_norm, image: None }
        }
    })
}

/// Random nonnegatively constrained quadratics, one per agent.
fn quad_consensus(
    n: usize,
    d: usize,
    seed: u64,
    mixing: MixingMatrix,
) -> (DistProblem, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agents = Vec::new();
    for _ in 0..n {
        let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let q = (&a * a.transpose()) / d as f64
            + DMatrix::identity(d, d) * rng.gen_range(0.2..0.6);
        let b = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        agents.push(DistAgent { f: Arc::new(NonnegOrthant), h: Arc::new(Quadratic::new(q, b)) });
    }
    let x1 = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
    (DistProblem { agents, mixing, dim: d }, x1)
}

#[derive(Serialize)]
struct Summary<'a> {
    solver: &'a str,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    iterations: usize,
    prox_grad_rounds: u64,
    neighbor_rounds: u64,
    allreduce_sum: u64,
    allreduce_min: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_delta_x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_feasibility: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_rel_err_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_tau: Option<f64>,
    eps: f64,
    max_iters: usize,
    wall_time_s: f64,
}

fn run_solver(
    id: SolverId,
    r: &Resolved,
    wb: &Workbench,
) -> Result<DistRun, SolverError> {
    let run = &r.file.run;
    let mut net = Network::new(wb.prob.mixing.matrix().nrows());
    match id.ls_kind() {
        None => pg_extra(
            &wb.prob,
            &mut net,
            wb.x1.clone(),
            run.sigma.unwrap(),
            run.max_iters,
            run.eps,
            &wb.metrics,
            false,
        ),
        Some(kind) => {
            let tau0 = if id == SolverId::Alg2Const {
                run.tau_const.unwrap()
            } else if let Some(t) = run.tau0 {
                t
            } else {
                let cap = tau_cap(r.params.beta, r.params.delta_k, wb.consensus_norm);
                run.tau0_cap_scale.unwrap() * cap
            };
            let mut cfg = DistRunConfig::new(r.params, kind);
            cfg.tau0 = Some(tau0);
            cfg.max_iters = run.max_iters;
            cfg.eps = run.eps;
            solve(&wb.prob, &cfg, &mut net, wb.x1.clone(), &wb.metrics, None)
        }
    }
}

fn write_outputs(
    dir: &Path,
    id: SolverId,
    r: &Resolved,
    wb: &Workbench,
    outcome: &Result<DistRun, SolverError>,
    wall_time_s: f64,
) -> std::io::Result<()> {
    let name = id.as_str();
    let mut summary = Summary {
        solver: name,
        status: "error",
        error: None,
        iterations: 0,
        prox_grad_rounds: 0,
        neighbor_rounds: 0,
        allreduce_sum: 0,
        allreduce_min: 0,
        final_objective: None,
        final_delta_x: None,
        final_feasibility: None,
        final_rel_err_mean: None,
        final_tau: None,
        eps: r.file.run.eps,
        max_iters: r.file.run.max_iters,
        wall_time_s,
    };

    match outcome {
        Ok(run) => {
            summary.status = match run.stop {
                StopReason::Converged { .. } => "converged",
                StopReason::IterationCap => "iteration_cap",
            };
            summary.final_objective = Some(wb.prob.objective(&run.state.x));
            if let Some(last) = run.trace.rows.last() {
                summary.iterations = last.k;
                summary.prox_grad_rounds = last.prox_grad_rounds;
                summary.neighbor_rounds = last.neighbor_rounds;
                summary.allreduce_sum = last.allreduce_sum;
                summary.allreduce_min = last.allreduce_min;
                summary.final_delta_x = Some(last.delta_x);
                summary.final_feasibility = Some(last.feasibility);
                summary.final_rel_err_mean = last.rel_err_mean;
                summary.final_tau = Some(last.tau);
            }

            let csv = File::create(dir.join(format!("{name}.csv")))?;
            run.trace.write_csv(BufWriter::new(csv))?;

            if let (true, Some((side, _))) = (r.file.output.write_images, &wb.image) {
                let n = run.state.x.nrows();
                let mean = DVector::from_fn(run.state.x.ncols(), |j, _| {
                    (0..n).map(|i| run.state.x[(i, j)]).sum::<f64>() / n as f64
                });
                let img = File::create(dir.join(format!("{name}.pgm")))?;
                io::write_pgm(BufWriter::new(img), &mean, *side)?;
            }
        }
        Err(e) => summary.error = Some(e.to_string()),
    }

    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(dir.join(format!("{name}_summary.json")), json + "\n")
}

/// Output directory after applying the `PDLS_OUTPUT_ROOT` override.
pub fn output_dir(dir: &str) -> PathBuf {
    let path = Path::new(dir);
    match std::env::var_os("PDLS_OUTPUT_ROOT") {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

pub fn execute(r: &Resolved) -> Result<(), Failure> {
    let wb = build_workbench(r)?;
    let dir = output_dir(&r.file.output.dir);
    let io_fail = |e: std::io::Error| Failure::Config(format!("{}: {e}", dir.display()));
    fs::create_dir_all(&dir).map_err(io_fail)?;

    if let (true, Some((side, truth))) = (r.file.output.write_images, &wb.image) {
        let f = File::create(dir.join("truth.pgm")).map_err(io_fail)?;
        io::write_pgm(BufWriter::new(f), truth, *side).map_err(io_fail)?;
    }

    let mut failed: Option<(SolverId, SolverError)> = None;
    for &id in &r.solvers {
        let start = Instant::now();
        let outcome = run_solver(id, r, &wb);
        let wall = start.elapsed().as_secs_f64();
        write_outputs(&dir, id, r, &wb, &outcome, wall).map_err(io_fail)?;
        match &outcome {
            Ok(run) => {
                let last = run.trace.rows.last();
                println!(
                    "{}: {} after {} iterations, {} prox-gradient rounds, {:.2}s",
                    id.as_str(),
                    match run.stop {
                        StopReason::Converged { .. } => "converged",
                        StopReason::IterationCap => "hit the iteration cap",
                    },
                    last.map_or(0, |l| l.k),
                    last.map_or(0, |l| l.prox_grad_rounds),
                    wall,
                );
            }
            Err(e) => {
                println!("{}: failed: {e}", id.as_str());
                if failed.is_none() {
                    failed = Some((id, e.clone()));
                }
            }
        }
    }
    println!("wrote {}", dir.display());

    match failed {
        None => Ok(()),
        Some((id, e)) => Err(Failure::Solver(format!("{} failed: {e}", id.as_str()))),
    }
}
