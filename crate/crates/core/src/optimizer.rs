//! Cost minimization by adjoint gradient descent, and a damped fixed-point
//! sweep on the forward-backward system with a pointwise control minimizer.
//!
//! All evaluations inside one solve reuse a single noise realization (sample
//! average approximation), which makes the line search and finite-difference
//! comparisons well-posed. The L² gradient of the cost at a control field is
//! the pointwise control-gradient of the Lagrangian along the simulated
//! trajectory; its discrete pairing uses `P(t_{k+1})` against the drift term
//! and the step-`k` diffusion loadings, the exact transpose of the explicit
//! Euler step, so that the pairing against any direction reproduces the
//! derivative of the simulated cost up to regression error.

use crate::adjoint::{
    optimality_residual, solve_adjoint, AdjointEnsemble, DriverMode, RegressionBasis,
};
use crate::coefficients::ProblemSpec;
use crate::error::{Error, Result};
use crate::forward::{
    draw_noise, evaluate_cost, simulate_forward, ControlField, NoiseBundle, PathEnsemble, TimeGrid,
};
use crate::lagrangian::{grad_v_l, AdjointPoint};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;
const NONCONTRACTION_LIMIT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    Gradient,
    Picard,
    Mfg,
}

/// Solver parameters; `step_size` and `backtrack` drive the Armijo search in
/// gradient mode, `damping` the fixed-point modes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveConfig {
    pub mode: SolveMode,
    pub max_iters: usize,
    pub step_size: f64,
    pub backtrack: f64,
    pub tol_grad: f64,
    pub tol_cost: f64,
    pub damping: f64,
    pub seed: u64,
    pub basis: RegressionBasis,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            mode: SolveMode::Gradient,
            max_iters: 100,
            step_size: 1.0,
            backtrack: 0.5,
            tol_grad: 1e-4,
            tol_cost: 1e-10,
            damping: 0.8,
            seed: 0,
            basis: RegressionBasis::default(),
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step_size <= 0.0 {
            return Err(Error::Config("step_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.backtrack) || self.backtrack == 0.0 {
            return Err(Error::Config("backtrack factor must lie in (0,1)".into()));
        }
        if self.tol_grad <= 0.0 || self.tol_cost <= 0.0 {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.damping) || self.damping == 0.0 {
            return Err(Error::Config("damping must lie in (0,1]".into()));
        }
        Ok(())
    }

    fn driver_mode(&self) -> DriverMode {
        match self.mode {
            SolveMode::Mfg => DriverMode::Game,
            _ => DriverMode::MeanField,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub residual: f64,
    /// Accepted step size (gradient mode) or control-update norm (fixed point).
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    CostStall,
    ControlUpdateTolerance,
    MaxIterations,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveSummary {
    pub mode: SolveMode,
    pub n_particles: usize,
    pub steps: usize,
    pub seed: u64,
    pub iterations: Vec<IterationRecord>,
    pub final_cost: f64,
    pub final_residual: f64,
    pub converged: bool,
    pub reason: StopReason,
}

/// Full solve output; the summary is the serializable part.
pub struct SolveOutput {
    pub summary: SolveSummary,
    pub control: ControlField,
    pub ensemble: PathEnsemble,
    pub adjoint: AdjointEnsemble,
}

/// One cost/gradient evaluation at a fixed control and noise realization.
pub struct GradientEval {
    pub cost: f64,
    pub gradient: ControlField,
    /// L² norm of the gradient field (the optimality residual).
    pub residual: f64,
    pub ensemble: PathEnsemble,
    pub adjoint: AdjointEnsemble,
}

/// Simulate, solve the adjoint, and assemble the L² cost gradient
/// `D_v g + (D_v f)ᵀ P(t_{k+1}) + Σ_j (D_v σ^j)ᵀ Q^j(t_k)` per particle/step.
pub fn cost_gradient(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    ctrl: &ControlField,
    noise: &Arc<NoiseBundle>,
    basis: &RegressionBasis,
    mode: DriverMode,
) -> Result<GradientEval> {
    let ensemble = simulate_forward(spec, grid, ctrl, noise)?;
    let cost = evaluate_cost(spec, grid, &ensemble, ctrl)?;
    let adjoint = solve_adjoint(spec, grid, &ensemble, ctrl, basis, mode)?;
    let gradient = ControlField {
        values: (0..grid.steps)
            .map(|k| {
                let mu = ensemble.measure(k);
                let t = grid.node(k);
                (0..ensemble.n_particles())
                    .map(|i| {
                        let ap = adjoint.dual_point(k, i);
                        grad_v_l(spec, &mu.points()[i], mu, &ctrl.values[k][i], t, &ap)
                    })
                    .collect()
            })
            .collect(),
        feedback_tag: None,
    };
    let residual = gradient.norm_l2_sq(grid, ensemble.weights()).sqrt();
    Ok(GradientEval {
        cost,
        gradient,
        residual,
        ensemble,
        adjoint,
    })
}

/// Adjoint gradient descent with Armijo backtracking on the fixed-noise cost.
pub fn solve_gradient_descent(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    n_particles: usize,
    config: &SolveConfig,
    init: Option<ControlField>,
) -> Result<SolveOutput> {
    config.validate()?;
    let noise = Arc::new(draw_noise(spec, grid, n_particles, config.seed));
    let mut ctrl =
        init.unwrap_or_else(|| ControlField::zeros(grid, n_particles, spec.control_dim));
    let mode = config.driver_mode();
    let mut records = Vec::new();
    let mut prev_cost: Option<f64> = None;

    let mut eval = cost_gradient(spec, grid, &ctrl, &noise, &config.basis, mode)?;
    loop {
        let iteration = records.len();
        if eval.residual <= config.tol_grad {
            records.push(IterationRecord {
                iteration,
                cost: eval.cost,
                residual: eval.residual,
                step: 0.0,
            });
            return Ok(finish_solve(
                config, grid, ctrl, eval, records, true, StopReason::GradientTolerance,
            ));
        }
        if let Some(prev) = prev_cost {
            if (prev - eval.cost).abs() <= config.tol_cost {
                records.push(IterationRecord {
                    iteration,
                    cost: eval.cost,
                    residual: eval.residual,
                    step: 0.0,
                });
                return Ok(finish_solve(
                    config, grid, ctrl, eval, records, true, StopReason::CostStall,
                ));
            }
        }
        if iteration >= config.max_iters {
            records.push(IterationRecord {
                iteration,
                cost: eval.cost,
                residual: eval.residual,
                step: 0.0,
            });
            return Ok(finish_solve(
                config, grid, ctrl, eval, records, false, StopReason::MaxIterations,
            ));
        }

        // Armijo backtracking along the negative gradient.
        let grad_norm_sq = eval.residual * eval.residual;
        let mut eta = config.step_size;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = ctrl.add_scaled(&eval.gradient, -eta);
            let ens = simulate_forward(spec, grid, &candidate, &noise);
            if let Ok(ens) = ens {
                if let Ok(cost) = evaluate_cost(spec, grid, &ens, &candidate) {
                    if cost <= eval.cost - ARMIJO_C * eta * grad_norm_sq {
                        accepted = Some((candidate, eta));
                        break;
                    }
                }
            }
            eta *= config.backtrack;
        }
        let (next_ctrl, eta_used) = accepted.ok_or(Error::Stall {
            iteration,
            halvings: MAX_HALVINGS,
            cost: eval.cost,
            residual: eval.residual,
        })?;
        records.push(IterationRecord {
            iteration,
            cost: eval.cost,
            residual: eval.residual,
            step: eta_used,
        });
        prev_cost = Some(eval.cost);
        ctrl = next_ctrl;
        eval = cost_gradient(spec, grid, &ctrl, &noise, &config.basis, mode)?;
    }
}

fn finish_solve(
    config: &SolveConfig,
    grid: &TimeGrid,
    ctrl: ControlField,
    eval: GradientEval,
    records: Vec<IterationRecord>,
    converged: bool,
    reason: StopReason,
) -> SolveOutput {
    SolveOutput {
        summary: SolveSummary {
            mode: config.mode,
            n_particles: eval.ensemble.n_particles(),
            steps: grid.steps,
            seed: config.seed,
            iterations: records,
            final_cost: eval.cost,
            final_residual: eval.residual,
            converged,
            reason,
        },
        control: ctrl,
        ensemble: eval.ensemble,
        adjoint: eval.adjoint,
    }
}

/// Pointwise minimizer of `v ↦ L(x, m, v, s; p, q)`: the supplied closed-form
/// feedback when available, otherwise a damped Newton iteration on
/// `D_v L = 0` (bisection fallback in one control dimension).
pub fn pointwise_minimizer(
    spec: &ProblemSpec,
    x: &DVector<f64>,
    m: &crate::measure::EmpiricalMeasure,
    v_start: &DVector<f64>,
    s: f64,
    ap: &AdjointPoint,
) -> Result<DVector<f64>> {
    if let Some(fb) = &spec.feedback {
        return Ok(fb(x, m, s, &ap.p, &ap.q));
    }
    let d = spec.control_dim;
    let h = |v: &DVector<f64>| grad_v_l(spec, x, m, v, s, ap);
    let mut v = v_start.clone();
    let newton_tol = 1e-10;
    for _ in 0..50 {
        let hv = h(&v);
        if hv.norm() <= newton_tol * (1.0 + v.norm()) {
            return Ok(v);
        }
        // Finite-difference Jacobian of D_v L in v.
        let fd = 1e-6 * (1.0 + v.norm());
        let mut jac = DMatrix::zeros(d, d);
        for b in 0..d {
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[b] += fd;
            vm[b] -= fd;
            let col = (h(&vp) - h(&vm)) / (2.0 * fd);
            for a in 0..d {
                jac[(a, b)] = col[a];
            }
        }
        let delta = match jac.lu().solve(&(-&hv)) {
            Some(delta) => delta,
            None => break,
        };
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let cand = &v + &delta * alpha;
            if h(&cand).norm() < hv.norm() * (1.0 - 1e-4 * alpha) {
                v = cand;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let hv = h(&v);
    if hv.norm() <= newton_tol * (1.0 + v.norm()) {
        return Ok(v);
    }
    if d == 1 {
        return bisect_scalar(&h, v_start[0]).map(|r| DVector::from_vec(vec![r]));
    }
    Err(Error::InnerSolve(format!(
        "Newton failed to solve D_v L = 0 (final |D_v L| = {:.3e})",
        hv.norm()
    )))
}

fn bisect_scalar(
    h: &impl Fn(&DVector<f64>) -> DVector<f64>,
    start: f64,
) -> Result<f64> {
    let eval = |v: f64| h(&DVector::from_vec(vec![v]))[0];
    let mut radius = 1.0;
    let (mut lo, mut hi) = (start - radius, start + radius);
    let mut expansions = 0;
    while eval(lo) * eval(hi) > 0.0 {
        radius *= 2.0;
        lo = start - radius;
        hi = start + radius;
        expansions += 1;
        if expansions > 60 {
            return Err(Error::InnerSolve(
                "bisection could not bracket a root of D_v L".into(),
            ));
        }
    }
    let (mut lo_val,) = (eval(lo),);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let mid_val = eval(mid);
        if mid_val == 0.0 || (hi - lo) < 1e-14 * (1.0 + mid.abs()) {
            return Ok(mid);
        }
        if lo_val * mid_val <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            lo_val = mid_val;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Damped substitution of the pointwise minimizer into the forward-backward
/// system until the control update stalls.
fn picard_loop(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    n_particles: usize,
    config: &SolveConfig,
    init: Option<ControlField>,
    mode: DriverMode,
) -> Result<SolveOutput> {
    config.validate()?;
    let noise = Arc::new(draw_noise(spec, grid, n_particles, config.seed));
    let mut ctrl =
        init.unwrap_or_else(|| ControlField::zeros(grid, n_particles, spec.control_dim));
    let mut records = Vec::new();
    let mut prev_update = f64::INFINITY;
    let mut increases = 0usize;

    for iteration in 0..config.max_iters {
        let ensemble = simulate_forward(spec, grid, &ctrl, &noise)?;
        let cost = evaluate_cost(spec, grid, &ensemble, &ctrl)?;
        let adjoint = solve_adjoint(spec, grid, &ensemble, &ctrl, &config.basis, mode)?;

        // Pointwise minimizer at the same-time adjoint slice.
        let mut vhat_rows = Vec::with_capacity(grid.steps);
        for k in 0..grid.steps {
            let mu = ensemble.measure(k);
            let t = grid.node(k);
            let mut row = Vec::with_capacity(n_particles);
            for i in 0..n_particles {
                let ap = adjoint.point(k, i);
                row.push(pointwise_minimizer(
                    spec,
                    &mu.points()[i],
                    mu,
                    &ctrl.values[k][i],
                    t,
                    &ap,
                )?);
            }
            vhat_rows.push(row);
        }
        let vhat = ControlField {
            values: vhat_rows,
            feedback_tag: Some("pointwise_minimizer".into()),
        };
        let next = ctrl.blend(&vhat, config.damping);
        let update_norm = next
            .add_scaled(&ctrl, -1.0)
            .norm_l2_sq(grid, ensemble.weights())
            .sqrt();
        let residual = optimality_residual(spec, grid, &ensemble, &ctrl, &adjoint);
        records.push(IterationRecord {
            iteration,
            cost,
            residual,
            step: update_norm,
        });

        if update_norm > prev_update {
            increases += 1;
            if increases >= NONCONTRACTION_LIMIT {
                return Err(Error::NonContraction {
                    consecutive: increases,
                    last_norm: update_norm,
                });
            }
        } else {
            increases = 0;
        }
        prev_update = update_norm;
        ctrl = next;

        if update_norm <= config.tol_grad {
            let eval = cost_gradient(spec, grid, &ctrl, &noise, &config.basis, mode)?;
            return Ok(finish_solve(
                config,
                grid,
                ctrl,
                eval,
                records,
                true,
                StopReason::ControlUpdateTolerance,
            ));
        }
    }
    let eval = cost_gradient(spec, grid, &ctrl, &noise, &config.basis, mode)?;
    Ok(finish_solve(
        config, grid, ctrl, eval, records, false, StopReason::MaxIterations,
    ))
}

/// Fixed-point mode for the mean-field control problem.
pub fn solve_picard_fbsde(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    n_particles: usize,
    config: &SolveConfig,
    init: Option<ControlField>,
) -> Result<SolveOutput> {
    picard_loop(spec, grid, n_particles, config, init, DriverMode::MeanField)
}

/// Fixed-point mode for the game: the adjoint driver and terminal condition
/// omit all measure-derivative terms, so each particle best-responds to the
/// frozen population flow.
pub fn solve_mfg(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    n_particles: usize,
    config: &SolveConfig,
    init: Option<ControlField>,
) -> Result<SolveOutput> {
    picard_loop(spec, grid, n_particles, config, init, DriverMode::Game)
}

/// Dispatch on the configured mode.
pub fn solve(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    n_particles: usize,
    config: &SolveConfig,
    init: Option<ControlField>,
) -> Result<SolveOutput> {
    match config.mode {
        SolveMode::Gradient => solve_gradient_descent(spec, grid, n_particles, config, init),
        SolveMode::Picard => solve_picard_fbsde(spec, grid, n_particles, config, init),
        SolveMode::Mfg => solve_mfg(spec, grid, n_particles, config, init),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapRow {
    pub theta: f64,
    pub combination_cost: f64,
    pub gap: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvexityGapReport {
    pub cost_v1: f64,
    pub cost_v2: f64,
    pub diff_norm_sq: f64,
    pub rows: Vec<GapRow>,
    pub pass: bool,
}

/// Evaluate `J(θ v₁ + (1-θ) v₂) - θ J(v₁) - (1-θ) J(v₂)` under common random
/// numbers. With a strong-convexity modulus `lambda`, each gap must fall
/// below `-slack_factor · λ θ(1-θ) ||v₂-v₁||²`; otherwise below
/// `absolute_slack`.
#[allow(clippy::too_many_arguments)]
pub fn check_cost_convexity(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    v1: &ControlField,
    v2: &ControlField,
    thetas: &[f64],
    noise: &Arc<NoiseBundle>,
    lambda: Option<f64>,
    slack_factor: f64,
    absolute_slack: f64,
) -> Result<ConvexityGapReport> {
    let cost_of = |ctrl: &ControlField| -> Result<f64> {
        let ens = simulate_forward(spec, grid, ctrl, noise)?;
        evaluate_cost(spec, grid, &ens, ctrl)
    };
    let j1 = cost_of(v1)?;
    let j2 = cost_of(v2)?;
    let diff_norm_sq = v2.add_scaled(v1, -1.0).norm_l2_sq(grid, noise.weights());
    let mut rows = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        // blend(v2, theta) on v1 gives (1-θ) v1 + θ v2; we want θ v1 + (1-θ) v2.
        let combo = v2.blend(v1, theta);
        let jc = cost_of(&combo)?;
        let gap = jc - theta * j1 - (1.0 - theta) * j2;
        let bound = match lambda {
            Some(l) => -slack_factor * l * theta * (1.0 - theta) * diff_norm_sq + absolute_slack,
            None => absolute_slack,
        };
        rows.push(GapRow {
            theta,
            combination_cost: jc,
            gap,
            bound,
            pass: gap <= bound,
        });
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(ConvexityGapReport {
        cost_v1: j1,
        cost_v2: j2,
        diff_norm_sq,
        rows,
        pass,
    })
}


#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaSweepRow {
    pub lambda: f64,
    pub converged: bool,
    pub outcome: String,
    pub iterations: usize,
    pub final_cost: Option<f64>,
}

/// Convergence/divergence of the fixed-point sweep across a grid of
/// convexity moduli. No attempt is made to compute the threshold constant;
/// the table is the diagnostic.
pub fn lambda_sweep(
    make_problem: impl Fn(f64) -> Result<ProblemSpec>,
    lambdas: &[f64],
    grid: &TimeGrid,
    n_particles: usize,
    config: &SolveConfig,
) -> Vec<LambdaSweepRow> {
    lambdas
        .iter()
        .map(|&lambda| match make_problem(lambda) {
            Err(e) => LambdaSweepRow {
                lambda,
                converged: false,
                outcome: e.name().to_string(),
                iterations: 0,
                final_cost: None,
            },
            Ok(spec) => match solve_picard_fbsde(&spec, grid, n_particles, config, None) {
                Ok(out) => LambdaSweepRow {
                    lambda,
                    converged: out.summary.converged,
                    outcome: format!("{:?}", out.summary.reason),
                    iterations: out.summary.iterations.len(),
                    final_cost: Some(out.summary.final_cost),
                },
                Err(e) => LambdaSweepRow {
                    lambda,
                    converged: false,
                    outcome: e.name().to_string(),
                    iterations: 0,
                    final_cost: None,
                },
            },
        })
        .collect()
}
