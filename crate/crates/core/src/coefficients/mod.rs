//! Problem definition surface: coefficient functions, their pointwise and
//! measure derivatives, structured linear-quadratic families, and numerical
//! validators for every supplied derivative.

mod lq;
mod types;
mod validate;

pub use lq::{lq_to_problem, LqSpec};
pub use types::{
    Control, ControlGradFn, ControlJacFn, DriftFn, FeedbackFn, MatrixKernel, ProblemSpec,
    ProblemSpecBuilder, RunningCostFn, SamplerFn, ScalarFlatFn, State, StateGradFn, StateJacFn,
    TerminalCostFn, TerminalFlatFn, TerminalGradFn, TerminalKernel, VectorFlatFn, VectorKernel,
    VolFn, Volatility,
};
pub use validate::{
    check_convexity_b3, check_monotonicity, convexity_report, measure_derivative_report,
    monotonicity_report, pointwise_report, validate_measure_derivative,
    validate_pointwise_derivatives, CheckOutcome, Coefficient, ConvexityMode, ConvexityReport,
    MeasureDerivativeReport, MonotonicityMode, MonotonicityReport, PointwiseReport,
    ValidatorSettings,
};
