//! Registered builtin problem instances, addressable by name from run
//! configurations and tests.

use crate::coefficients::{
    lq_to_problem, LqSpec, MatrixKernel, ProblemSpec, TerminalKernel, VectorKernel,
};
use crate::error::{Error, Result};
use crate::rng::normal;
use nalgebra::{DMatrix, DVector};

pub struct BuiltinProblem {
    pub name: &'static str,
    pub description: &'static str,
    pub spec: ProblemSpec,
    /// Present when the instance is linear-quadratic, enabling the Riccati
    /// oracle.
    pub lq: Option<LqSpec>,
}

pub fn builtin_names() -> &'static [&'static str] {
    &[
        "scalar_lq",
        "mean_lq",
        "det_nonlinear",
        "stoch_mild",
        "noncontraction_demo",
        "cubic_control",
        "faulty_derivative",
    ]
}

/// Scalar controlled diffusion with quadratic costs:
/// `f = v`, `σ = 0.3`, `g = (x² + v²)/2`, `g_T = 0`, `X(0) ~ N(0, 1)`.
pub fn scalar_lq_spec() -> LqSpec {
    let mut s = LqSpec::scalar(0.0, 1.0, 0.5);
    s.drift_control = vec![vec![1.0]];
    s.cost_state = vec![vec![1.0]];
    s.cost_control = vec![vec![1.0]];
    s.vol_offset = vec![vec![0.3]];
    s.vol_state = vec![vec![vec![0.0]]];
    s.vol_mean = vec![vec![vec![0.0]]];
    s.vol_control = vec![vec![vec![0.0]]];
    s
}

/// Mean-penalized variant: `g` gains `x̄²/2` and the initial law is
/// `N(1, 0.25)`, so steering the population mean matters.
pub fn mean_lq_spec() -> LqSpec {
    let mut s = scalar_lq_spec();
    s.cost_mean = vec![vec![1.0]];
    s.initial_mean = vec![1.0];
    s.initial_cov = vec![vec![0.25]];
    s
}

fn d1(x: f64) -> DVector<f64> {
    DVector::from_vec(vec![x])
}

/// Deterministic nonlinear instance exercising every driver term:
/// `f = v + 0.3 sin(x) + 0.2 x̄`, `g = (v² + x²)/2 + 0.1 x x̄`,
/// `g_T = x²/2 + 0.2 x̄²`, zero volatility, `X(0) ~ N(0.3, 1)`.
///
/// The running-cost coupling `0.1 x x̄` has the copy-dependent kernel
/// `D_ξ dg/dν(x̄, ·)(ξ) = 0.1 x̄`, so the quadratic-cost double sum is
/// genuinely exercised; the drift and terminal couplings are copy-free.
pub fn det_nonlinear_spec() -> ProblemSpec {
    ProblemSpec::builder(1, 1, 0.0, 1.0)
        .drift(|x, m, v, _s| d1(v[0] + 0.3 * x[0].sin() + 0.2 * m.mean()[0]))
        .drift_dx(|x, _m, _v, _s| DMatrix::from_element(1, 1, 0.3 * x[0].cos()))
        .drift_dv(|_x, _m, _v, _s| DMatrix::identity(1, 1))
        .drift_dnu(MatrixKernel::CopyFree(Box::new(|_m, _s, _xi| {
            DMatrix::from_element(1, 1, 0.2)
        })))
        .drift_flat(|_x, _m, _v, _s, xi| d1(0.2 * xi[0]))
        .running_cost(|x, m, v, _s| {
            0.5 * (v[0] * v[0] + x[0] * x[0]) + 0.1 * x[0] * m.mean()[0]
        })
        .running_dx(|x, m, _v, _s| d1(x[0] + 0.1 * m.mean()[0]))
        .running_dv(|_x, _m, v, _s| v.clone())
        .running_dnu(VectorKernel::General(Box::new(|x_copy, _v, _m, _s, _xi| {
            d1(0.1 * x_copy[0])
        })))
        .running_flat(|x, _m, _v, _s, xi| 0.1 * x[0] * xi[0])
        .terminal_cost(|x, m| 0.5 * x[0] * x[0] + 0.2 * m.mean()[0] * m.mean()[0])
        .terminal_dx(|x, _m| d1(x[0]))
        .terminal_dnu(TerminalKernel::CopyFree(Box::new(|m, _xi| {
            d1(0.4 * m.mean()[0])
        })))
        .terminal_flat(|_x, m, xi| 0.4 * m.mean()[0] * xi[0])
        .initial_sampler(|rng| d1(0.3 + normal(rng)))
        .build()
        .expect("complete builder")
}

/// Mildly nonlinear stochastic instance: `f = v + 0.1 tanh(x)`, `σ = 0.3`,
/// `g = (x² + v²)/2 + 0.05 x̄²`, `g_T = x²/2`, `X(0) ~ N(0.4, 1)`.
///
/// The mean penalty keeps its kernel copy-free so the driver stays O(N) at
/// the ensemble sizes the stochastic gradient check runs at.
pub fn stoch_mild_spec() -> ProblemSpec {
    ProblemSpec::builder(1, 1, 0.0, 1.0)
        .drift(|x, _m, v, _s| d1(v[0] + 0.1 * x[0].tanh()))
        .drift_dx(|x, _m, _v, _s| {
            let t = x[0].tanh();
            DMatrix::from_element(1, 1, 0.1 * (1.0 - t * t))
        })
        .drift_dv(|_x, _m, _v, _s| DMatrix::identity(1, 1))
        .volatility(crate::coefficients::Volatility::Columns {
            columns: vec![Box::new(|_x, _m, _v, _s| d1(0.3))],
            dx: vec![Box::new(|_x, _m, _v, _s| DMatrix::zeros(1, 1))],
            dv: vec![Box::new(|_x, _m, _v, _s| DMatrix::zeros(1, 1))],
            dnu: vec![MatrixKernel::Zero],
            flat: vec![None],
        })
        .running_cost(|x, m, v, _s| {
            let mean = m.mean()[0];
            0.5 * (x[0] * x[0] + v[0] * v[0]) + 0.05 * mean * mean
        })
        .running_dx(|x, _m, _v, _s| d1(x[0]))
        .running_dv(|_x, _m, v, _s| v.clone())
        .running_dnu(VectorKernel::CopyFree(Box::new(|m, _s, _xi| {
            d1(0.1 * m.mean()[0])
        })))
        .running_flat(|_x, m, _v, _s, xi| 0.1 * m.mean()[0] * xi[0])
        .terminal_cost(|x, _m| 0.5 * x[0] * x[0])
        .terminal_dx(|x, _m| d1(x[0]))
        .initial_sampler(|rng| d1(0.4 + normal(rng)))
        .build()
        .expect("complete builder")
}

/// A deliberately broken copy of the scalar regulator: the supplied control
/// gradient of `g` is doubled. Exists so fault injection can be driven from
/// a run configuration.
pub fn faulty_derivative_spec() -> ProblemSpec {
    let mut spec = lq_to_problem(&scalar_lq_spec()).expect("valid template");
    spec.running_dv = Box::new(|_x, _m, v, _s| v * 2.0);
    spec
}

/// Strong state-control cross term violating joint convexity:
/// `g = v²/2 - 2 x v + x²/2`. The pointwise minimizer `v̂ = 2x - p` feeds
/// state growth back into the control, so the undamped fixed-point sweep
/// expands.
pub fn noncontraction_demo_spec() -> ProblemSpec {
    ProblemSpec::builder(1, 1, 0.0, 1.0)
        .drift(|_x, _m, v, _s| v.clone())
        .drift_dx(|_x, _m, _v, _s| DMatrix::zeros(1, 1))
        .drift_dv(|_x, _m, _v, _s| DMatrix::identity(1, 1))
        .running_cost(|x, _m, v, _s| 0.5 * v[0] * v[0] - 2.0 * x[0] * v[0] + 0.5 * x[0] * x[0])
        .running_dx(|x, _m, v, _s| d1(x[0] - 2.0 * v[0]))
        .running_dv(|x, _m, v, _s| d1(v[0] - 2.0 * x[0]))
        .terminal_cost(|_x, _m| 0.0)
        .terminal_dx(|_x, _m| d1(0.0))
        .initial_sampler(|rng| d1(1.0 + 0.1 * normal(rng)))
        .feedback(|x, _m, _s, p, _q| d1(2.0 * x[0] - p[0]))
        .build()
        .expect("complete builder")
}

/// Quartic control penalty without a closed-form minimizer, driving the
/// damped Newton inner solve: `g = x²/2 + v²/2 + v⁴/4`.
pub fn cubic_control_spec() -> ProblemSpec {
    ProblemSpec::builder(1, 1, 0.0, 1.0)
        .drift(|_x, _m, v, _s| v.clone())
        .drift_dx(|_x, _m, _v, _s| DMatrix::zeros(1, 1))
        .drift_dv(|_x, _m, _v, _s| DMatrix::identity(1, 1))
        .running_cost(|x, _m, v, _s| {
            0.5 * x[0] * x[0] + 0.5 * v[0] * v[0] + 0.25 * v[0].powi(4)
        })
        .running_dx(|x, _m, _v, _s| x.clone())
        .running_dv(|_x, _m, v, _s| d1(v[0] + v[0].powi(3)))
        .terminal_cost(|_x, _m| 0.0)
        .terminal_dx(|_x, _m| d1(0.0))
        .initial_sampler(|rng| d1(normal(rng)))
        .build()
        .expect("complete builder")
}

/// Look up a registered instance by name.
pub fn builtin_problem(name: &str) -> Result<BuiltinProblem> {
    let (description, spec, lq): (&'static str, ProblemSpec, Option<LqSpec>) = match name {
        "scalar_lq" => {
            let lq = scalar_lq_spec();
            (
                "scalar LQ regulator with additive noise",
                lq_to_problem(&lq)?,
                Some(lq),
            )
        }
        "mean_lq" => {
            let lq = mean_lq_spec();
            (
                "scalar LQ regulator with a population-mean penalty",
                lq_to_problem(&lq)?,
                Some(lq),
            )
        }
        "det_nonlinear" => (
            "deterministic nonlinear drift with mean couplings in drift and costs",
            det_nonlinear_spec(),
            None,
        ),
        "stoch_mild" => (
            "mildly nonlinear stochastic instance with a mean-coupled running cost",
            stoch_mild_spec(),
            None,
        ),
        "noncontraction_demo" => (
            "joint-convexity violation making the fixed-point sweep diverge",
            noncontraction_demo_spec(),
            None,
        ),
        "cubic_control" => (
            "quartic control penalty solved by the Newton inner minimizer",
            cubic_control_spec(),
            None,
        ),
        "faulty_derivative" => (
            "scalar regulator with a deliberately doubled control gradient",
            faulty_derivative_spec(),
            None,
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown builtin problem '{other}'; registered: {}",
                builtin_names().join(", ")
            )))
        }
    };
    Ok(BuiltinProblem {
        name: builtin_names()
            .iter()
            .find(|&&n| n == name)
            .expect("name checked above"),
        description,
        spec,
        lq,
    })
}
