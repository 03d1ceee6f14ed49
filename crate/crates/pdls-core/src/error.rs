//! Error types shared by the solver layers.

use std::fmt;

/// Failure inside a solver run.
#[derive(Debug, Clone, PartialEq)]
pub enum SolverError {
    /// The backtracking loop shrank the stepsize `max_backtracks` times
    /// without acceptance.
    StepsizeUnderflow {
        /// Agent whose test kept rejecting, when attributable.
        agent: Option<usize>,
        /// Last trial stepsize before giving up.
        tau: f64,
    },
    /// An iterate left the representable range (NaN/inf or norm blow-up).
    Diverged { iter: usize, norm: f64 },
    /// An oracle was evaluated outside its domain.
    DomainViolation { what: &'static str },
    /// Inconsistent dimensions between problem pieces.
    DimensionMismatch { what: &'static str },
    /// A configuration value ruled out by the method's assumptions.
    InvalidParameter { what: String },
}

impl fmt::Display for SolverError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverError::StepsizeUnderflow { agent, tau } => match agent {
                Some(i) => write!(f, "linesearch stepsize underflow at agent {i} (tau = {tau:.3e})"),
                None => write!(f, "linesearch stepsize underflow (tau = {tau:.3e})"),
            },
            SolverError::Diverged { iter, norm } => {
                write!(f, "iterate diverged at iteration {iter} (norm = {norm:.3e})")
            }
            SolverError::DomainViolation { what } => write!(f, "domain violation: {what}"),
            SolverError::DimensionMismatch { what } => write!(f, "dimension mismatch: {what}"),
            SolverError::InvalidParameter { what } => write!(f, "invalid parameter: {what}"),
        }
    }
}

impl std::error::Error for SolverError {}
