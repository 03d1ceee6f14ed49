//! Distributed proximal-gradient splitting with backtracking linesearch.
//!
//! This crate implements a primal-dual splitting method for convex
//! minimization whose dual smooth part only has a *locally* Lipschitz
//! gradient, so the stepsize is found by backtracking instead of from a
//! global Lipschitz constant. The same iteration, specialized to a
//! consensus operator built from a gossip (mixing) matrix, yields a
//! decentralized solver for
//!
//! ```text
//!     minimize_x  sum_i  f_i(x) + h_i(x)
//! ```
//!
//! over a connected agent network, where each agent holds a private
//! prox-friendly `f_i` and a private smooth `h_i`. Three distributed
//! linesearch variants are provided (a summed test, a per-agent minimum
//! test, and W-weighted versions that avoid knowing the mixing matrix's
//! spectrum), together with a PG-EXTRA baseline, a synchronous
//! message-passing network simulator with communication accounting, two
//! experiment families (Poisson deconvolution and information-matrix
//! estimation), and independent reference solvers used by the test
//! suite.
//!
//! Module map:
//! - [`operators`]: prox / smooth-function / linear-map interfaces and a
//!   small library of concrete instances.
//! - [`graph`]: network topologies, Metropolis mixing matrices, spectral
//!   validation.
//! - [`netsim`]: synchronous gossip and allreduce primitives with cost
//!   tallies.
//! - [`saddle`]: the generic primal-dual iteration with linesearch.
//! - [`dist`]: the decentralized solver specialization.
//! - [`problems`]: experiment instance builders and metrics.
//! - [`reference`]: centralized reference solvers, dual certificates,
//!   finite-difference checks.

pub mod dist;
pub mod error;
pub mod graph;
pub mod netsim;
pub mod operators;
pub mod par;
pub mod problems;
pub mod reference;
pub mod saddle;
pub mod trace;
