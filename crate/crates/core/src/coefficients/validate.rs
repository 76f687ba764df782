//! Numerical validators for user-supplied derivatives and for the structural
//! assumptions (strong convexity in the control, monotonicity of the
//! terminal coupling).
//!
//! These are sampled certificates, not proofs: each check evaluates randomly
//! sampled arguments (standard-normal states/controls/atoms, uniform times,
//! 16-atom normal clouds, all seeded) and reports the worst margin together
//! with the sample count. Growth conditions outside the sampled region are
//! not checked.

use super::types::*;
use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::rng::{self, stream_rng};
use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Default number of atoms in sampled measures.
const DEFAULT_ATOMS: usize = 16;
/// Slack factor multiplying the mixture step in flat-derivative checks; the
/// quotient carries an O(ε) truncation term for functionals nonlinear in m.
const MIXTURE_SLACK: f64 = 10.0;
/// Violation tolerance for convexity/monotonicity margins.
const MARGIN_TOL: f64 = 1e-9;

/// Sampling parameters shared by the validators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidatorSettings {
    pub samples: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub atoms: usize,
}

impl Default for ValidatorSettings {
    fn default() -> Self {
        Self {
            samples: 50,
            step: 1e-5,
            tolerance: 1e-6,
            seed: 0,
            atoms: DEFAULT_ATOMS,
        }
    }
}

/// Outcome of one named check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub worst_error: f64,
    pub worst_location: String,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointwiseReport {
    pub samples: usize,
    pub step: f64,
    pub tolerance: f64,
    pub checks: Vec<CheckOutcome>,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coefficient {
    Drift,
    Volatility(usize),
    RunningCost,
    TerminalCost,
}

impl std::fmt::Display for Coefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coefficient::Drift => write!(f, "drift"),
            Coefficient::Volatility(j) => write!(f, "volatility[{j}]"),
            Coefficient::RunningCost => write!(f, "running_cost"),
            Coefficient::TerminalCost => write!(f, "terminal_cost"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureDerivativeReport {
    pub coefficient: String,
    pub samples: usize,
    pub step: f64,
    pub tolerance: f64,
    pub checks: Vec<CheckOutcome>,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvexityMode {
    ControlOnly,
    Joint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub mode: ConvexityMode,
    pub samples: usize,
    pub lambda: f64,
    pub worst_margin: f64,
    pub witness: Option<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonotonicityMode {
    Displacement,
    LasryLions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub mode: MonotonicityMode,
    pub samples: usize,
    pub worst_value: f64,
    pub witness: Option<String>,
    pub pass: bool,
}

struct SamplePoint {
    x: State,
    v: Control,
    s: f64,
    m: EmpiricalMeasure,
}

fn sample_measure(rng: &mut rand_chacha::ChaCha12Rng, dim: usize, atoms: usize) -> EmpiricalMeasure {
    let pts = (0..atoms).map(|_| rng::normal_vector(rng, dim)).collect();
    EmpiricalMeasure::uniform(pts).expect("atoms >= 1")
}

fn sample_point(
    rng: &mut rand_chacha::ChaCha12Rng,
    spec: &ProblemSpec,
    atoms: usize,
) -> SamplePoint {
    let x = rng::normal_vector(rng, spec.state_dim);
    let v = rng::normal_vector(rng, spec.control_dim);
    let s = spec.t0 + rng.random_range(0.0..=1.0) * (spec.horizon - spec.t0);
    let m = sample_measure(rng, spec.state_dim, atoms);
    SamplePoint { x, v, s, m }
}

/// Relative mismatch with an absolute floor: differences below `1e-8` pass
/// outright, otherwise the error is measured relative to the analytic value.
fn mismatch(fd: f64, analytic: f64) -> f64 {
    let abs = (fd - analytic).abs();
    if abs <= 1e-8 {
        0.0
    } else {
        abs / analytic.abs().max(1e-8)
    }
}

struct CheckAccum {
    name: String,
    worst: f64,
    location: String,
}

impl CheckAccum {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            worst: 0.0,
            location: String::new(),
        }
    }

    fn record(&mut self, err: f64, location: impl Fn() -> String) {
        if err > self.worst {
            self.worst = err;
            self.location = location();
        }
    }

    fn outcome(self, tol: f64) -> CheckOutcome {
        CheckOutcome {
            pass: self.worst <= tol,
            name: self.name,
            worst_error: self.worst,
            worst_location: self.location,
        }
    }
}

fn first_failure(checks: &[CheckOutcome], tolerance: f64) -> Option<Error> {
    checks.iter().find(|c| !c.pass).map(|c| Error::DerivativeMismatch {
        check: c.name.clone(),
        worst_error: c.worst_error,
        location: c.worst_location.clone(),
        tolerance,
    })
}

/// Central finite differences of `f`, `σ^j`, `g`, `g_T` in `x` and `v`
/// against the supplied pointwise derivatives.
pub fn pointwise_report(spec: &ProblemSpec, settings: &ValidatorSettings) -> PointwiseReport {
    let mut rng = stream_rng(settings.seed, rng::stream::VALIDATION);
    let h = settings.step;
    let n = spec.state_dim;
    let d = spec.control_dim;

    let nv = spec.volatility.n_columns();
    let mut acc: Vec<CheckAccum> = Vec::new();
    acc.push(CheckAccum::new("D_x f"));
    acc.push(CheckAccum::new("D_v f"));
    for j in 0..nv {
        acc.push(CheckAccum::new(&format!("D_x sigma[{j}]")));
        acc.push(CheckAccum::new(&format!("D_v sigma[{j}]")));
    }
    acc.push(CheckAccum::new("D_x g"));
    acc.push(CheckAccum::new("D_v g"));
    acc.push(CheckAccum::new("D_x g_T"));

    for _ in 0..settings.samples {
        let pt = sample_point(&mut rng, spec, settings.atoms);
        let SamplePoint { x, v, s, m } = &pt;
        let loc = |what: &str| {
            let x = x.clone();
            let v = v.clone();
            let s = *s;
            let what = what.to_string();
            move || format!("{what} at x={x:?}, v={v:?}, s={s:.4}")
        };

        let mut idx = 0;

        // Vector coefficient in x: column b of the Jacobian.
        let jac = (spec.drift_dx)(x, m, v, *s);
        for b in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[b] += h;
            xm[b] -= h;
            let fd = ((spec.drift)(&xp, m, v, *s) - (spec.drift)(&xm, m, v, *s)) / (2.0 * h);
            for a in 0..n {
                acc[idx].record(mismatch(fd[a], jac[(a, b)]), loc("D_x f"));
            }
        }
        idx += 1;
        let jac = (spec.drift_dv)(x, m, v, *s);
        for b in 0..d {
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[b] += h;
            vm[b] -= h;
            let fd = ((spec.drift)(x, m, &vp, *s) - (spec.drift)(x, m, &vm, *s)) / (2.0 * h);
            for a in 0..n {
                acc[idx].record(mismatch(fd[a], jac[(a, b)]), loc("D_v f"));
            }
        }
        idx += 1;

        if let Volatility::Columns { columns, dx, dv, .. } = &spec.volatility {
            for j in 0..nv {
                let jac = dx[j](x, m, v, *s);
                for b in 0..n {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[b] += h;
                    xm[b] -= h;
                    let fd = (columns[j](&xp, m, v, *s) - columns[j](&xm, m, v, *s)) / (2.0 * h);
                    for a in 0..n {
                        acc[idx].record(mismatch(fd[a], jac[(a, b)]), loc("D_x sigma"));
                    }
                }
                idx += 1;
                let jac = dv[j](x, m, v, *s);
                for b in 0..d {
                    let mut vp = v.clone();
                    let mut vm = v.clone();
                    vp[b] += h;
                    vm[b] -= h;
                    let fd = (columns[j](x, m, &vp, *s) - columns[j](x, m, &vm, *s)) / (2.0 * h);
                    for a in 0..n {
                        acc[idx].record(mismatch(fd[a], jac[(a, b)]), loc("D_v sigma"));
                    }
                }
                idx += 1;
            }
        }

        let grad = (spec.running_dx)(x, m, v, *s);
        for b in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[b] += h;
            xm[b] -= h;
            let fd = ((spec.running_cost)(&xp, m, v, *s) - (spec.running_cost)(&xm, m, v, *s))
                / (2.0 * h);
            acc[idx].record(mismatch(fd, grad[b]), loc("D_x g"));
        }
        idx += 1;
        let grad = (spec.running_dv)(x, m, v, *s);
        for b in 0..d {
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[b] += h;
            vm[b] -= h;
            let fd = ((spec.running_cost)(x, m, &vp, *s) - (spec.running_cost)(x, m, &vm, *s))
                / (2.0 * h);
            acc[idx].record(mismatch(fd, grad[b]), loc("D_v g"));
        }
        idx += 1;
        let grad = (spec.terminal_dx)(x, m);
        for b in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[b] += h;
            xm[b] -= h;
            let fd =
                ((spec.terminal_cost)(&xp, m) - (spec.terminal_cost)(&xm, m)) / (2.0 * h);
            acc[idx].record(mismatch(fd, grad[b]), loc("D_x g_T"));
        }
    }

    let checks: Vec<CheckOutcome> = acc
        .into_iter()
        .map(|a| a.outcome(settings.tolerance))
        .collect();
    let pass = checks.iter().all(|c| c.pass);
    PointwiseReport {
        samples: settings.samples,
        step: settings.step,
        tolerance: settings.tolerance,
        checks,
        pass,
    }
}

/// Like [`pointwise_report`], but fails with [`Error::DerivativeMismatch`]
/// naming the worst offending derivative.
pub fn validate_pointwise_derivatives(
    spec: &ProblemSpec,
    settings: &ValidatorSettings,
) -> Result<PointwiseReport> {
    let report = pointwise_report(spec, settings);
    match first_failure(&report.checks, settings.tolerance) {
        None => Ok(report),
        Some(err) => Err(err),
    }
}

/// Evaluate a coefficient's measure dependence as a function of the measure
/// alone, other arguments held fixed. Vector-valued coefficients are reduced
/// per component.
fn coefficient_values(
    spec: &ProblemSpec,
    which: Coefficient,
    x: &State,
    v: &Control,
    s: f64,
    m: &EmpiricalMeasure,
) -> DVector<f64> {
    match which {
        Coefficient::Drift => (spec.drift)(x, m, v, s),
        Coefficient::Volatility(j) => spec.vol(j, x, m, v, s),
        Coefficient::RunningCost => DVector::from_vec(vec![(spec.running_cost)(x, m, v, s)]),
        Coefficient::TerminalCost => DVector::from_vec(vec![(spec.terminal_cost)(x, m)]),
    }
}

/// Flat derivative per component if supplied.
#[allow(clippy::too_many_arguments)]
fn flat_values(
    spec: &ProblemSpec,
    which: Coefficient,
    x: &State,
    v: &Control,
    s: f64,
    m: &EmpiricalMeasure,
    xi: &State,
) -> Option<DVector<f64>> {
    match which {
        Coefficient::Drift => spec.drift_flat.as_ref().map(|f| f(x, m, v, s, xi)),
        Coefficient::Volatility(j) => match &spec.volatility {
            Volatility::Columns { flat, .. } => flat[j].as_ref().map(|f| f(x, m, v, s, xi)),
            Volatility::Zero => None,
        },
        Coefficient::RunningCost => spec
            .running_flat
            .as_ref()
            .map(|f| DVector::from_vec(vec![f(x, m, v, s, xi)])),
        Coefficient::TerminalCost => spec
            .terminal_flat
            .as_ref()
            .map(|f| DVector::from_vec(vec![f(x, m, xi)])),
    }
}

/// ξ-Jacobian of the flat derivative (rows = coefficient components), if the
/// kernel is supplied (Zero counts as supplied and returns zero).
fn kernel_values(
    spec: &ProblemSpec,
    which: Coefficient,
    x: &State,
    v: &Control,
    s: f64,
    m: &EmpiricalMeasure,
    xi: &State,
) -> nalgebra::DMatrix<f64> {
    let n = spec.state_dim;
    match which {
        Coefficient::Drift => spec
            .drift_dnu
            .eval(x, v, m, s, xi)
            .unwrap_or_else(|| nalgebra::DMatrix::zeros(n, n)),
        Coefficient::Volatility(j) => match &spec.volatility {
            Volatility::Columns { dnu, .. } => dnu[j]
                .eval(x, v, m, s, xi)
                .unwrap_or_else(|| nalgebra::DMatrix::zeros(n, n)),
            Volatility::Zero => nalgebra::DMatrix::zeros(n, n),
        },
        Coefficient::RunningCost => {
            let g = spec
                .running_dnu
                .eval(x, v, m, s, xi)
                .unwrap_or_else(|| DVector::zeros(n));
            nalgebra::DMatrix::from_fn(1, n, |_, b| g[b])
        }
        Coefficient::TerminalCost => {
            let g = spec
                .terminal_dnu
                .eval(x, m, xi)
                .unwrap_or_else(|| DVector::zeros(n));
            nalgebra::DMatrix::from_fn(1, n, |_, b| g[b])
        }
    }
}

/// Checks the flat-derivative definition through the mixture quotient, the
/// ξ-gradient against finite differences of the flat derivative, and the
/// atom-perturbation identity tying the ξ-gradient to the derivative of the
/// lifted functional. Skips checks whose ingredients are not supplied.
pub fn measure_derivative_report(
    spec: &ProblemSpec,
    which: Coefficient,
    settings: &ValidatorSettings,
) -> MeasureDerivativeReport {
    let mut rng = stream_rng(settings.seed, rng::stream::VALIDATION);
    let eps = settings.step;
    let n = spec.state_dim;

    let mut flat_check = CheckAccum::new("flat_derivative_mixture");
    let mut grad_check = CheckAccum::new("xi_gradient_of_flat");
    let mut lift_check = CheckAccum::new("l_derivative_identity");
    let mut have_flat = false;

    for sample in 0..settings.samples {
        let pt = sample_point(&mut rng, spec, settings.atoms);
        let SamplePoint { x, v, s, m } = &pt;
        let m2 = sample_measure(&mut rng, n, settings.atoms);

        // (a) mixture quotient vs integral of the flat derivative.
        if flat_values(spec, which, x, v, *s, m, &m.points()[0]).is_some() {
            have_flat = true;
            let mixed = m.mix(&m2, eps).expect("same dimension");
            let qeps =
                (coefficient_values(spec, which, x, v, *s, &mixed)
                    - coefficient_values(spec, which, x, v, *s, m))
                    / eps;
            let mut integral = DVector::zeros(qeps.len());
            for (pnt, w) in m2.points().iter().zip(m2.weights()) {
                integral.axpy(*w, &flat_values(spec, which, x, v, *s, m, pnt).unwrap(), 1.0);
            }
            for (pnt, w) in m.points().iter().zip(m.weights()) {
                integral.axpy(-*w, &flat_values(spec, which, x, v, *s, m, pnt).unwrap(), 1.0);
            }
            for a in 0..qeps.len() {
                let err = (qeps[a] - integral[a]).abs() / (1.0 + integral[a].abs());
                flat_check.record(err, || format!("sample {sample}, component {a}"));
            }

            // (b) ξ-gradient of the flat derivative by central differences.
            let xi = rng::normal_vector(&mut rng, n);
            let kern = kernel_values(spec, which, x, v, *s, m, &xi);
            for b in 0..n {
                let mut xp = xi.clone();
                let mut xm = xi.clone();
                xp[b] += eps;
                xm[b] -= eps;
                let fd = (flat_values(spec, which, x, v, *s, m, &xp).unwrap()
                    - flat_values(spec, which, x, v, *s, m, &xm).unwrap())
                    / (2.0 * eps);
                for a in 0..fd.len() {
                    grad_check.record(mismatch(fd[a], kern[(a, b)]), || {
                        format!("sample {sample}, entry ({a},{b})")
                    });
                }
            }
        }

        // (c) atom perturbation: d/dδ F(m with atoms shifted by δu) equals
        // Σ_i w_i D_ξ dF/dν(x,m,v,s)(ξ_i) u_i.
        let dirs: Vec<DVector<f64>> = (0..m.len())
            .map(|_| rng::normal_vector(&mut rng, n))
            .collect();
        let perturb = |delta: f64| -> EmpiricalMeasure {
            let pts = m
                .points()
                .iter()
                .zip(&dirs)
                .map(|(p, u)| p + u * delta)
                .collect();
            EmpiricalMeasure::new(pts, m.weights().to_vec()).unwrap()
        };
        let fd = (coefficient_values(spec, which, x, v, *s, &perturb(eps))
            - coefficient_values(spec, which, x, v, *s, &perturb(-eps)))
            / (2.0 * eps);
        let mut predicted = DVector::zeros(fd.len());
        for ((pnt, w), u) in m.points().iter().zip(m.weights()).zip(&dirs) {
            let kern = kernel_values(spec, which, x, v, *s, m, pnt);
            predicted += kern * u * *w;
        }
        for a in 0..fd.len() {
            let err = (fd[a] - predicted[a]).abs() / (1.0 + predicted[a].abs());
            lift_check.record(err, || format!("sample {sample}, component {a}"));
        }
    }

    let tol_mix = settings.tolerance + MIXTURE_SLACK * eps;
    let mut checks = Vec::new();
    if have_flat {
        checks.push(flat_check.outcome(tol_mix));
        checks.push(grad_check.outcome(settings.tolerance.max(100.0 * eps * eps)));
    }
    checks.push(lift_check.outcome(tol_mix));
    let pass = checks.iter().all(|c| c.pass);
    MeasureDerivativeReport {
        coefficient: which.to_string(),
        samples: settings.samples,
        step: settings.step,
        tolerance: settings.tolerance,
        checks,
        pass,
    }
}

/// Like [`measure_derivative_report`], failing with the worst mismatch.
pub fn validate_measure_derivative(
    spec: &ProblemSpec,
    which: Coefficient,
    settings: &ValidatorSettings,
) -> Result<MeasureDerivativeReport> {
    let report = measure_derivative_report(spec, which, settings);
    match first_failure(&report.checks, settings.tolerance) {
        None => Ok(report),
        Some(err) => Err(err),
    }
}

/// Sampled strong-convexity certificate for the running cost (and, in joint
/// mode, the flat-derivative convexity of both costs). Returns the report
/// with its pass flag; see [`check_convexity_b3`] for the erroring variant.
pub fn convexity_report(
    spec: &ProblemSpec,
    mode: ConvexityMode,
    samples: usize,
    lambda: f64,
    seed: u64,
) -> Result<ConvexityReport> {
    if lambda <= 0.0 {
        return Err(Error::Convexity("lambda must be positive".into()));
    }
    if mode == ConvexityMode::Joint
        && (spec.running_flat.is_none() || spec.terminal_flat.is_none())
    {
        return Err(Error::Config(
            "joint convexity check requires the scalar flat derivatives of g and g_T".into(),
        ));
    }
    let mut rng = stream_rng(seed, rng::stream::VALIDATION);
    let n = spec.state_dim;
    let mut worst = f64::INFINITY;
    let mut witness = None;

    for sample in 0..samples {
        let pt = sample_point(&mut rng, spec, DEFAULT_ATOMS);
        let SamplePoint { x, v, s, m } = &pt;
        let v2 = rng::normal_vector(&mut rng, spec.control_dim);

        let mut margins: Vec<(String, f64)> = Vec::new();
        match mode {
            ConvexityMode::ControlOnly => {
                let lhs = (spec.running_cost)(x, m, &v2, *s) - (spec.running_cost)(x, m, v, *s);
                let rhs = (spec.running_dv)(x, m, v, *s).dot(&(&v2 - v))
                    + lambda * (&v2 - v).norm_squared();
                margins.push(("g control convexity".into(), lhs - rhs));
            }
            ConvexityMode::Joint => {
                let x2 = rng::normal_vector(&mut rng, n);
                let m2 = sample_measure(&mut rng, n, DEFAULT_ATOMS);
                let xi = rng::normal_vector(&mut rng, n);
                let xi2 = rng::normal_vector(&mut rng, n);
                let flat_g = spec.running_flat.as_ref().unwrap();
                let flat_gt = spec.terminal_flat.as_ref().unwrap();

                let integral =
                    m2.integrate(|p| flat_g(x, m, v, *s, p)) - m.integrate(|p| flat_g(x, m, v, *s, p));
                let lhs =
                    (spec.running_cost)(&x2, &m2, &v2, *s) - (spec.running_cost)(x, m, v, *s);
                let rhs = (spec.running_dx)(x, m, v, *s).dot(&(&x2 - x))
                    + integral
                    + (spec.running_dv)(x, m, v, *s).dot(&(&v2 - v))
                    + lambda * (&v2 - v).norm_squared();
                margins.push(("g joint convexity".into(), lhs - rhs));

                let dxi = spec
                    .running_dnu
                    .eval(x, v, m, *s, &xi)
                    .unwrap_or_else(|| DVector::zeros(n));
                margins.push((
                    "dg/dnu convexity in xi".into(),
                    flat_g(x, m, v, *s, &xi2) - flat_g(x, m, v, *s, &xi) - dxi.dot(&(&xi2 - &xi)),
                ));

                let integral_t =
                    m2.integrate(|p| flat_gt(x, m, p)) - m.integrate(|p| flat_gt(x, m, p));
                margins.push((
                    "g_T joint convexity".into(),
                    (spec.terminal_cost)(&x2, &m2)
                        - (spec.terminal_cost)(x, m)
                        - (spec.terminal_dx)(x, m).dot(&(&x2 - x))
                        - integral_t,
                ));

                let dxi_t = spec
                    .terminal_dnu
                    .eval(x, m, &xi)
                    .unwrap_or_else(|| DVector::zeros(n));
                margins.push((
                    "dg_T/dnu convexity in xi".into(),
                    flat_gt(x, m, &xi2) - flat_gt(x, m, &xi) - dxi_t.dot(&(&xi2 - &xi)),
                ));
            }
        }

        for (name, margin) in margins {
            if margin < worst {
                worst = margin;
                if margin < -MARGIN_TOL {
                    witness = Some(format!(
                        "{name} violated by {margin:.3e} at sample {sample}: x={x:?}, v={v:?}, s={s:.4}"
                    ));
                }
            }
        }
    }

    Ok(ConvexityReport {
        mode,
        samples,
        lambda,
        worst_margin: worst,
        witness,
        pass: worst >= -MARGIN_TOL,
    })
}

/// Like [`convexity_report`], failing with the witness tuple.
pub fn check_convexity_b3(
    spec: &ProblemSpec,
    mode: ConvexityMode,
    samples: usize,
    lambda: f64,
    seed: u64,
) -> Result<ConvexityReport> {
    let report = convexity_report(spec, mode, samples, lambda, seed)?;
    if report.pass {
        Ok(report)
    } else {
        Err(Error::Convexity(report.witness.clone().unwrap_or_else(|| {
            format!("worst margin {:.3e}", report.worst_margin)
        })))
    }
}

/// Sampled monotonicity certificate for the terminal coupling, on paired
/// random ensembles with their empirical laws. Returns the report with its
/// pass flag; see [`check_monotonicity`] for the erroring variant.
pub fn monotonicity_report(
    spec: &ProblemSpec,
    mode: MonotonicityMode,
    samples: usize,
    ensemble_size: usize,
    seed: u64,
) -> MonotonicityReport {
    let mut rng = stream_rng(seed, rng::stream::ENSEMBLES);
    let n = spec.state_dim;
    let mut worst = f64::INFINITY;
    let mut witness = None;

    for sample in 0..samples {
        let eta1: Vec<State> = (0..ensemble_size)
            .map(|_| rng::normal_vector(&mut rng, n))
            .collect();
        let eta2: Vec<State> = (0..ensemble_size)
            .map(|_| rng::normal_vector(&mut rng, n))
            .collect();
        let m1 = EmpiricalMeasure::uniform(eta1.clone()).unwrap();
        let m2 = EmpiricalMeasure::uniform(eta2.clone()).unwrap();
        let w = 1.0 / ensemble_size as f64;

        let value = match mode {
            MonotonicityMode::Displacement => eta1
                .iter()
                .zip(&eta2)
                .map(|(a, b)| {
                    w * ((spec.terminal_dx)(b, &m2) - (spec.terminal_dx)(a, &m1)).dot(&(b - a))
                })
                .sum::<f64>(),
            MonotonicityMode::LasryLions => eta1
                .iter()
                .zip(&eta2)
                .map(|(a, b)| {
                    w * ((spec.terminal_cost)(a, &m1) + (spec.terminal_cost)(b, &m2)
                        - (spec.terminal_cost)(a, &m2)
                        - (spec.terminal_cost)(b, &m1))
                })
                .sum::<f64>(),
        };
        if value < worst {
            worst = value;
            if value < -MARGIN_TOL {
                witness = Some(format!(
                    "value {value:.3e} at sample {sample}; first atoms eta1[0]={:?}, eta2[0]={:?}",
                    eta1[0], eta2[0]
                ));
            }
        }
    }

    MonotonicityReport {
        mode,
        samples,
        worst_value: worst,
        witness,
        pass: worst >= -MARGIN_TOL,
    }
}

/// Like [`monotonicity_report`], failing with a witness pair.
pub fn check_monotonicity(
    spec: &ProblemSpec,
    mode: MonotonicityMode,
    samples: usize,
    ensemble_size: usize,
    seed: u64,
) -> Result<MonotonicityReport> {
    let report = monotonicity_report(spec, mode, samples, ensemble_size, seed);
    if report.pass {
        Ok(report)
    } else {
        Err(Error::Monotonicity(report.witness.clone().unwrap_or_else(
            || format!("worst value {:.3e}", report.worst_value),
        )))
    }
}
