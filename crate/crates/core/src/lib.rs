//! Particle-discretized solver for mean-field (McKean-Vlasov) stochastic
//! control problems.
//!
//! The pipeline: simulate the controlled interacting particle system forward
//! (`forward`), solve the adjoint backward SDE by cross-particle regression
//! (`adjoint`), assemble the control gradient from the Lagrangian derivatives
//! (`lagrangian`), and minimize the cost by adjoint gradient descent or a
//! damped fixed-point sweep on the forward-backward system (`optimizer`).
//! Linear-quadratic instances are validated against independently derived
//! Riccati reference solutions (`lq_oracle`). Measures are empirical point
//! clouds throughout (`measure`), and every user-supplied derivative can be
//! checked numerically (`coefficients`).

pub mod adjoint;
pub mod coefficients;
pub mod error;
pub mod forward;
pub mod lagrangian;
pub mod lq_oracle;
pub mod measure;
pub mod optimizer;
pub mod problems;
pub mod report;
pub mod rng;

pub use error::{Error, Result};

// Re-exported so downstream crates build vectors and matrices against the
// same linear-algebra version.
pub use nalgebra;
