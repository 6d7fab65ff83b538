//! Simulation and verification toolkit for adaptive linear-quadratic
//! regulators.
//!
//! The crate simulates the discrete-time plant `x(t+1) = A x(t) + B u(t) + w(t+1)`
//! under quadratic stage cost, runs certainty-equivalence style adaptive
//! regulators against it, and checks their behavior against exact algebraic
//! identities (Riccati/Lyapunov residuals, the pathwise regret decomposition)
//! and the identifiability geometry of the closed loop.
//!
//! Module map:
//! - [`linalg`]: dense matrix utilities, discrete Riccati and Lyapunov solvers
//! - [`system`]: plant definition, noise generation, trajectory simulation
//! - [`estimation`]: closed-loop least squares and the episode schedule
//! - [`policies`]: the optimal regulator and the adaptive policies (CE, RCE, TS, GCE)
//! - [`geometry`]: null-spaces, level-sets, identifiability diagnostics
//! - [`regret`]: pathwise regret and its exact decomposition
//! - [`experiment`]: configuration, replicate orchestration, CSV emission

pub mod estimation;
pub mod experiment;
pub mod geometry;
pub mod linalg;
pub mod policies;
pub mod regret;
pub mod system;
