//! Variance-reduced proximal gradient (VRPG) for constrained stochastic
//! convex optimization, together with the machinery needed to check its
//! instance-dependent guarantees at desk scale: proximal operators with
//! optimality certificates, synthetic strongly-convex instances with
//! analytic KKT data, the scaled-perturbation benchmark `delta^2(N)`,
//! baseline solvers, and Monte Carlo claim verifiers.

pub mod baselines;
pub mod benchmark;
pub mod error;
pub mod exec;
pub mod instances;
pub mod linalg;
pub mod prox;
pub mod seeding;
pub mod verify;
pub mod vrpg;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
