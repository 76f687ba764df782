//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty measure: at least one atom is required")]
    EmptyMeasure,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("unsupported coupling: {0}")]
    UnsupportedCoupling(String),

    #[error("convexity violated: {0}")]
    Convexity(String),

    #[error("monotonicity violated: {0}")]
    Monotonicity(String),

    #[error("derivative mismatch in {check}: worst relative error {worst_error:.3e} at {location} (tolerance {tolerance:.3e})")]
    DerivativeMismatch {
        check: String,
        worst_error: f64,
        location: String,
        tolerance: f64,
    },

    #[error("state blow-up at step {step}, particle {particle}: |x| = {magnitude:.3e}")]
    BlowUp {
        step: usize,
        particle: usize,
        magnitude: f64,
    },

    #[error("cost evaluation produced a non-finite value at step {step}")]
    Evaluation { step: usize },

    #[error("mode error: {0}")]
    Mode(String),

    #[error("regression failure at step {step}: {reason} (try a larger ridge parameter or more particles)")]
    Regression { step: usize, reason: String },

    #[error("line search stalled after {halvings} halvings at iteration {iteration} (cost {cost:.6e}, residual {residual:.3e})")]
    Stall {
        iteration: usize,
        halvings: usize,
        cost: f64,
        residual: f64,
    },

    #[error("inner solve for the pointwise control minimizer failed: {0}")]
    InnerSolve(String),

    #[error("fixed-point iteration diverged: control update norms increased for {consecutive} consecutive iterations (last {last_norm:.3e})")]
    NonContraction { consecutive: usize, last_norm: f64 },

    #[error("Riccati integration blew up at time {time:.6}: |solution| = {magnitude:.3e}")]
    OracleBlowUp { time: f64, magnitude: f64 },

    #[error("oracle does not support this problem: {0}")]
    OracleUnsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// Stable short name of the error kind, used in machine-readable reports.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "DimensionError",
            Error::EmptyMeasure => "EmptyMeasureError",
            Error::InvalidWeights(_) => "InvalidWeightsError",
            Error::UnsupportedCoupling(_) => "UnsupportedCouplingError",
            Error::Convexity(_) => "ConvexityError",
            Error::Monotonicity(_) => "MonotonicityError",
            Error::DerivativeMismatch { .. } => "DerivativeMismatch",
            Error::BlowUp { .. } => "BlowUpError",
            Error::Evaluation { .. } => "EvaluationError",
            Error::Mode(_) => "ModeError",
            Error::Regression { .. } => "RegressionError",
            Error::Stall { .. } => "StallError",
            Error::InnerSolve(_) => "InnerSolveError",
            Error::NonContraction { .. } => "NonContractionError",
            Error::OracleBlowUp { .. } => "OracleBlowUpError",
            Error::OracleUnsupported(_) => "OracleUnsupportedError",
            Error::Config(_) => "ConfigError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
