//! Simulation of adaptively coupled particle systems on networks and their
//! graphon continuum limit.
//!
//! The finite system couples node states `phi_k` and edge weights `kappa_kl`:
//!
//! ```text
//! d/dt phi_k     = (1/N) sum_l kappa_kl g(t, phi_k, phi_l) + f_k(t, phi)
//! d/dt kappa_kl  = Lambda_kl(t, kappa, phi)
//! ```
//!
//! Embedding the states as step functions `u(t,x)` on `I = [0,1)` and the
//! weights as a kernel `K(t,x,y)` on `I x I` yields, for `N -> infinity`, the
//! integro-differential limit
//!
//! ```text
//! d/dt u(t,x)   = int_I K(t,x,y) g(t, u(t,x), u(t,y)) dy + f(t, x, u)
//! d/dt K(t,x,y) = Lambda(t, x, y, K, u)
//! ```
//!
//! with the initial kernel given by a graphon `W`. This crate provides
//!
//! * [`model`] — the dynamical ingredients `(g, f, Lambda)` with their bound
//!   and Lipschitz constants, built-in models (adaptive Kuramoto,
//!   Hebbian-type oscillators, opinion dynamics) and a sampling-based
//!   assumption checker,
//! * [`grid`] — uniform partitions of `I`, step-function fields, graphon
//!   cell averaging and `L^2` geometry,
//! * [`discrete`] — the N-particle right-hand side and fixed-step RK4
//!   integration with a-priori bound monitors,
//! * [`picard`] — the continuum solver: windowed Picard iteration on the
//!   solution operator plus a method-of-lines reference, with contraction
//!   windows, iterate bounds and closed-form envelopes,
//! * [`convergence`] — N-sweep convergence studies against a fine reference,
//!   discretization residuals, the Gronwall error envelope and rate fitting,
//! * [`config`] / [`io`] — JSON run configurations and CSV/JSON/binary
//!   artifact output backing the `graphlim` CLI.

pub mod config;
pub mod convergence;
pub mod discrete;
pub mod grid;
pub mod io;
pub mod model;
pub mod picard;
pub mod quadrature;
pub mod runner;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("grid incompatibility: {0}")]
    GridMismatch(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
