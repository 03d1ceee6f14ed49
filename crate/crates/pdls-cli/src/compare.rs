//! `compare` subcommand: line the traces in a run directory up at
//! matching communication budgets.
//!
//! Iteration counts are not comparable across solvers because each
//! kind spends a different number of prox-gradient rounds per
//! iteration; the table samples every trace at fixed fractions of
//! the smallest final round count instead.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use pdls_core::trace::{SolverTrace, TraceRow};
use serde::Serialize;

use crate::Failure;

const FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// A trace whose last row grew past this, or stopped being finite,
/// is reported as diverged.
const DIVERGED_ABOVE: f64 = 1e6;

#[derive(Serialize)]
struct Checkpoint {
    fraction: f64,
    rounds: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    rel_err: Option<f64>,
    feasibility: f64,
    tau: f64,
}

#[derive(Serialize)]
struct SolverReport {
    solver: String,
    diverged: bool,
    final_rounds: u64,
    final_delta_x: f64,
    final_feasibility: f64,
    final_tau: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_rel_err: Option<f64>,
    checkpoints: Vec<Checkpoint>,
}

#[derive(Serialize)]
struct Report {
    aligned_rounds: Vec<u64>,
    solvers: Vec<SolverReport>,
}

fn is_diverged(last: &TraceRow) -> bool {
    !last.delta_x.is_finite()
        || !last.feasibility.is_finite()
        || last.delta_x > DIVERGED_ABOVE
        || last.feasibility > DIVERGED_ABOVE
}

/// First row at or past `rounds`; rows are cumulative, so one exists
/// whenever `rounds` does not exceed the final tally.
fn row_at(rows: &[TraceRow], rounds: u64) -> &TraceRow {
    rows.iter()
        .find(|r| r.prox_grad_rounds >= rounds)
        .unwrap_or_else(|| rows.last().unwrap())
}

fn load_traces(dir: &Path) -> Result<Vec<SolverTrace>, Failure> {
    let bad = |e: std::io::Error| Failure::Config(format!("{}: {e}", dir.display()));
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(bad)? {
        let path = entry.map_err(bad)?.path();
        if path.extension().is_some_and(|x| x == "csv") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                names.push((stem.to_string(), path.clone()));
            }
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(Failure::Config(format!("no trace files in {}", dir.display())));
    }

    let mut traces = Vec::new();
    for (name, path) in names {
        let file = File::open(&path)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let trace = SolverTrace::read_csv(name, BufReader::new(file))
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        if trace.rows.is_empty() {
            return Err(Failure::Config(format!("{} has no rows", path.display())));
        }
        traces.push(trace);
    }
    Ok(traces)
}

fn build_report(traces: &[SolverTrace]) -> Report {
    let budget = traces
        .iter()
        .map(|t| t.rows.last().unwrap().prox_grad_rounds)
        .min()
        .unwrap();
    let aligned_rounds: Vec<u64> = FRACTIONS
        .iter()
        .map(|q| ((q * budget as f64).ceil() as u64).max(1))
        .collect();

    let solvers = traces
        .iter()
        .map(|t| {
            let last = t.rows.last().unwrap();
            let checkpoints = FRACTIONS
                .iter()
                .zip(&aligned_rounds)
                .map(|(&fraction, &rounds)| {
                    let row = row_at(&t.rows, rounds);
                    Checkpoint {
                        fraction,
                        rounds: row.prox_grad_rounds,
                        rel_err: row.rel_err_mean,
                        feasibility: row.feasibility,
                        tau: row.tau,
                    }
                })
                .collect();
            SolverReport {
                solver: t.solver.clone(),
                diverged: is_diverged(last),
                final_rounds: last.prox_grad_rounds,
                final_delta_x: last.delta_x,
                final_feasibility: last.feasibility,
                final_tau: last.tau,
                final_rel_err: last.rel_err_mean,
                checkpoints,
            }
        })
        .collect();

    Report { aligned_rounds, solvers }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3e}"))
}

fn print_text(report: &Report) {
    let rounds: Vec<String> = report.aligned_rounds.iter().map(u64::to_string).collect();
    println!("aligned at prox-gradient rounds {} (25/50/75/100%)", rounds.join(", "));
    for s in &report.solvers {
        let tag = if s.diverged { "  DIVERGED" } else { "" };
        println!("\n{}{tag}", s.solver);
        for c in &s.checkpoints {
            println!(
                "  {:>3.0}%  rounds {:>8}  rel_err {:>10}  feas {:>10.3e}  tau {:>10.3e}",
                c.fraction * 100.0,
                c.rounds,
                opt(c.rel_err),
                c.feasibility,
                c.tau,
            );
        }
        println!(
            "  last  rounds {:>8}  rel_err {:>10}  feas {:>10.3e}  tau {:>10.3e}  \
             delta_x {:.3e}",
            s.final_rounds,
            opt(s.final_rel_err),
            s.final_feasibility,
            s.final_tau,
            s.final_delta_x,
        );
    }
}

pub fn execute(dir: &Path, json: bool) -> Result<(), Failure> {
    let traces = load_traces(dir)?;
    let report = build_report(&traces);
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print_text(&report);
    }
    Ok(())
}
