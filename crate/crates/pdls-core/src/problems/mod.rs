//! Concrete problem families the solvers are exercised on, plus the
//! file formats their instances and results are stored in.

pub mod covariance;
pub mod io;
pub mod poisson;
