//! Per-iteration solver traces and their CSV form.
//!
//! Floats are written with 17 significant digits, enough to round-trip
//! `f64` exactly, so traces double as regression fixtures: the same
//! configuration must reproduce the same bytes.

use std::io::{self, BufRead, Write};

/// One outer iteration. Counter columns are cumulative; `backtracks`
/// has one entry per agent; `phi` and `gap` are present only when a
/// monitor was attached; `rel_err_*` only when a reference point was.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub prox_grad_rounds: u64,
    pub neighbor_rounds: u64,
    pub allreduce_sum: u64,
    pub allreduce_min: u64,
    pub tau: f64,
    pub backtracks: Vec<u32>,
    pub delta_x: f64,
    pub feasibility: f64,
    pub rel_err_mean: Option<f64>,
    pub rel_err_std: Option<f64>,
    pub phi: Option<f64>,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub solver: String,
    pub rows: Vec<TraceRow>,
}

pub const CSV_HEADER: &str = "k,prox_grad_rounds,neighbor_rounds,allreduce_sum,allreduce_min,tau,backtracks_per_agent,delta_x,feasibility,rel_err_mean,rel_err_std,phi,gap";

/// Decimal form with 17 significant digits; parses back to the same
/// bits.
pub fn full_precision(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(full_precision).unwrap_or_default()
}

impl SolverTrace {
    pub fn new(solver: impl Into<String>) -> Self {
        Self { solver: solver.into(), rows: Vec::new() }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.rows {
            let bt: Vec<String> = r.backtracks.iter().map(|b| b.to_string()).collect();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.k,
                r.prox_grad_rounds,
                r.neighbor_rounds,
                r.allreduce_sum,
                r.allreduce_min,
                full_precision(r.tau),
                bt.join(";"),
                full_precision(r.delta_x),
                full_precision(r.feasibility),
                opt(r.rel_err_mean),
                opt(r.rel_err_std),
                opt(r.phi),
                opt(r.gap),
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(solver: impl Into<String>, r: R) -> io::Result<Self> {
        let bad = |what: String| io::Error::new(io::ErrorKind::InvalidData, what);
        let mut lines = r.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim_end() == CSV_HEADER => {}
            _ => return Err(bad("missing or wrong trace header".into())),
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 13 {
                return Err(bad(format!("line {}: expected 13 columns, got {}", lineno + 2, cols.len())));
            }
            let f = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", lineno + 2)));
            let of = |s: &str| -> io::Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    f(s).map(Some)
                }
            };
            let backtracks = if cols[6].is_empty() {
                Vec::new()
            } else {
                cols[6]
                    .split(';')
                    .map(|s| s.parse::<u32>().map_err(|e| bad(format!("line {}: {e}", lineno + 2))))
                    .collect::<io::Result<Vec<u32>>>()?
            };
            rows.push(TraceRow {
                k: cols[0].parse().map_err(|e| bad(format!("line {}: {e}", lineno + 2)))?,
                prox_grad_rounds: cols[1].parse().map_err(|e| bad(format!("line {}: {e}", lineno + 2)))?,
                neighbor_rounds: cols[2].parse().map_err(|e| bad(format!("line {}: {e}", lineno + 2)))?,
                allreduce_sum: cols[3].parse().map_err(|e| bad(format!("line {}: {e}", lineno + 2)))?,
                allreduce_min: cols[4].parse().map_err(|e| bad(format!("line {}: {e}", lineno + 2)))?,
                tau: f(cols[5])?,
                backtracks,
                delta_x: f(cols[7])?,
                feasibility: f(cols[8])?,
                rel_err_mean: of(cols[9])?,
                rel_err_std: of(cols[10])?,
                phi: of(cols[11])?,
                gap: of(cols[12])?,
            });
        }
        Ok(Self { solver: solver.into(), rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SolverTrace {
        SolverTrace {
            solver: "alg2_sum".into(),
            rows: vec![
                TraceRow {
                    k: 1,
                    prox_grad_rounds: 2,
                    neighbor_rounds: 1,
                    allreduce_sum: 2,
                    allreduce_min: 0,
                    tau: 0.1234567890123456,
                    backtracks: vec![1, 1, 1],
                    delta_x: 1.0 / 3.0,
                    feasibility: 2.5e-4,
                    rel_err_mean: Some(0.5),
                    rel_err_std: Some(0.01),
                    phi: None,
                    gap: None,
                },
                TraceRow {
                    k: 2,
                    prox_grad_rounds: 3,
                    neighbor_rounds: 2,
                    allreduce_sum: 3,
                    allreduce_min: 0,
                    tau: 0.125,
                    backtracks: vec![0, 0, 0],
                    delta_x: 1e-300,
                    feasibility: 0.0,
                    rel_err_mean: None,
                    rel_err_std: None,
                    phi: Some(3.125),
                    gap: Some(f64::MIN_POSITIVE),
                },
            ],
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = SolverTrace::read_csv("alg2_sum", buf.as_slice()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn full_precision_roundtrips_bits() {
        for &x in &[0.1, 1.0 / 3.0, 2.5e-308, 1.7976931348623157e308, -0.0] {
            let s = full_precision(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn header_mismatch_is_an_error() {
        assert!(SolverTrace::read_csv("x", "k,tau\n1,0.5\n".as_bytes()).is_err());
    }
}
