//! Batch front end: load a run configuration, execute validators, solves,
//! gradient checks, or Riccati reference dumps, and emit reproducible CSV
//! and JSON artifacts.
//!
//! Exit codes: 0 on success, 1 when a check or solve fails, 2 on usage or
//! configuration errors.

pub mod config;

use clap::{Parser, Subcommand};
use config::{ResolvedProblem, RunConfig, SCHEMA_VERSION};
use mfc_core::adjoint::{DriverMode, RegressionDiagnostics};
use mfc_core::coefficients::{
    convexity_report, measure_derivative_report, monotonicity_report, pointwise_report,
    Coefficient, ConvexityReport, MeasureDerivativeReport, MonotonicityReport, PointwiseReport,
    ValidatorSettings,
};
use mfc_core::forward::{draw_noise, evaluate_cost, simulate_forward, ControlField, TimeGrid};
use mfc_core::lq_oracle::{solve_lq_mfc, solve_lq_mfg, OracleKind};
use mfc_core::optimizer::{cost_gradient, solve, SolveMode, SolveSummary};
use mfc_core::report as artifacts;
use mfc_core::rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "mfc",
    about = "Particle solver for mean-field stochastic control",
    version
)]
pub struct Cli {
    /// Path to the run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed override (replaces the configured grid seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress the stdout summary.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured derivative, convexity, and monotonicity checks.
    Validate,
    /// Minimize the cost and write convergence and control artifacts.
    Solve,
    /// Compare the adjoint gradient against finite differences of the cost.
    Gradcheck,
    /// Dump the Riccati reference schedule for a linear-quadratic problem.
    Oracle,
}

/// Failure modes that map onto process exit codes.
enum CliError {
    /// Configuration or I/O problem (exit 2).
    Usage(String),
    /// A check or solve failed (exit 1).
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => m,
        }
    }
}

/// Parse the process arguments and execute; returns the process exit code.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

struct Context {
    config: RunConfig,
    problem: ResolvedProblem,
    seed: u64,
    out_dir: PathBuf,
    quiet: bool,
}

fn load_context(cli: &Cli) -> Result<Context, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config <path> is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut config = RunConfig::from_str(&text).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(seed) = cli.seed {
        config.grid.seed = seed;
    }
    let problem = config
        .resolve_problem()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.outputs.directory.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", out_dir.display())))?;
    Ok(Context {
        seed: config.grid.seed,
        problem,
        config,
        out_dir,
        quiet: cli.quiet,
    })
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = load_context(cli)?;
    match cli.command {
        Command::Validate => cmd_validate(&ctx),
        Command::Solve => cmd_solve(&ctx),
        Command::Gradcheck => cmd_gradcheck(&ctx),
        Command::Oracle => cmd_oracle(&ctx),
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::write(dir.join(name), contents)
        .map_err(|e| CliError::Usage(format!("cannot write {name}: {e}")))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Usage(format!("cannot serialize {name}: {e}")))?;
    text.push('\n');
    write_file(dir, name, &text)
}

fn say(ctx: &Context, line: &str) {
    if !ctx.quiet {
        println!("{line}");
    }
}

// ---------------------------------------------------------------- validate

#[derive(Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub schema_version: u32,
    pub problem: String,
    pub seed: u64,
    pub pointwise: Option<PointwiseReport>,
    pub measure: Vec<MeasureDerivativeReport>,
    pub convexity: Option<ConvexityReport>,
    pub monotonicity: Vec<MonotonicityReport>,
    pub pass: bool,
}

fn cmd_validate(ctx: &Context) -> Result<(), CliError> {
    let checks = &ctx.config.checks;
    let spec = &ctx.problem.spec;
    let settings = ValidatorSettings {
        samples: checks.samples,
        step: checks.step,
        tolerance: checks.tolerance,
        seed: ctx.seed,
        atoms: 16,
    };

    let pointwise = checks.pointwise.then(|| pointwise_report(spec, &settings));
    let mut measure = Vec::new();
    if checks.measure {
        let mut settings_m = settings.clone();
        settings_m.step = settings.step.max(1e-4);
        let mut tags = vec![Coefficient::Drift];
        tags.extend((0..spec.volatility.n_columns()).map(Coefficient::Volatility));
        tags.push(Coefficient::RunningCost);
        tags.push(Coefficient::TerminalCost);
        for tag in tags {
            measure.push(measure_derivative_report(spec, tag, &settings_m));
        }
    }
    let convexity = match checks.convexity {
        Some(mode) => Some(
            convexity_report(spec, mode, checks.samples, checks.lambda, ctx.seed)
                .map_err(|e| CliError::Usage(e.to_string()))?,
        ),
        None => None,
    };
    let monotonicity: Vec<MonotonicityReport> = checks
        .monotonicity
        .iter()
        .map(|&mode| monotonicity_report(spec, mode, checks.samples, checks.ensemble_size, ctx.seed))
        .collect();

    let pass = pointwise.as_ref().is_none_or(|r| r.pass)
        && measure.iter().all(|r| r.pass)
        && convexity.as_ref().is_none_or(|r| r.pass)
        && monotonicity.iter().all(|r| r.pass);

    let report = ValidationReport {
        schema_version: SCHEMA_VERSION,
        problem: ctx.problem.name.clone(),
        seed: ctx.seed,
        pointwise,
        measure,
        convexity,
        monotonicity,
        pass,
    };
    write_json(&ctx.out_dir, "validation_report.json", &report)?;
    say(
        ctx,
        &format!(
            "validate {}: {}",
            ctx.problem.name,
            if pass { "pass" } else { "FAIL" }
        ),
    );
    if pass {
        Ok(())
    } else {
        let failing: Vec<String> = report
            .pointwise
            .iter()
            .flat_map(|r| r.checks.iter())
            .chain(report.measure.iter().flat_map(|r| r.checks.iter()))
            .filter(|c| !c.pass)
            .map(|c| c.name.clone())
            .chain(report.convexity.iter().filter(|r| !r.pass).map(|_| "convexity".into()))
            .chain(
                report
                    .monotonicity
                    .iter()
                    .filter(|r| !r.pass)
                    .map(|r| format!("monotonicity ({:?})", r.mode)),
            )
            .collect();
        Err(CliError::Failed(format!(
            "validation failed: {}",
            failing.join(", ")
        )))
    }
}

// ------------------------------------------------------------------- solve

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorReport {
    pub name: String,
    pub message: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub problem: String,
    pub grid: config::GridConfig,
    pub summary: Option<SolveSummary>,
    /// Per-step adjoint regression diagnostics of the final evaluation
    /// (absent in deterministic mode).
    pub regression: Option<Vec<RegressionDiagnostics>>,
    pub error: Option<ErrorReport>,
    pub artifacts: Vec<String>,
}

fn cmd_solve(ctx: &Context) -> Result<(), CliError> {
    let grid = TimeGrid::for_problem(&ctx.problem.spec, ctx.config.grid.steps)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let solve_config = ctx.config.solve.to_core(ctx.seed);
    let result = solve(
        &ctx.problem.spec,
        &grid,
        ctx.config.grid.particles,
        &solve_config,
        None,
    );

    let mut report = RunReport {
        schema_version: SCHEMA_VERSION,
        command: "solve".into(),
        problem: ctx.problem.name.clone(),
        grid: ctx.config.grid,
        summary: None,
        regression: None,
        error: None,
        artifacts: Vec::new(),
    };

    match result {
        Ok(out) => {
            let outs = &ctx.config.outputs;
            if outs.convergence {
                write_file(
                    &ctx.out_dir,
                    "convergence.csv",
                    &artifacts::convergence_csv(&out.summary),
                )?;
                report.artifacts.push("convergence.csv".into());
            }
            if outs.control {
                write_file(
                    &ctx.out_dir,
                    "final_control.csv",
                    &artifacts::control_csv(&grid, &out.control),
                )?;
                report.artifacts.push("final_control.csv".into());
            }
            if outs.trajectory {
                write_file(
                    &ctx.out_dir,
                    "trajectory.csv",
                    &artifacts::trajectory_csv(&grid, &out.ensemble),
                )?;
                report.artifacts.push("trajectory.csv".into());
            }
            if outs.adjoint {
                write_file(
                    &ctx.out_dir,
                    "adjoint.csv",
                    &artifacts::adjoint_csv(&grid, &out.adjoint),
                )?;
                report.artifacts.push("adjoint.csv".into());
            }
            if outs.ensemble_summary {
                let summary = artifacts::ensemble_summary(
                    &ctx.problem.spec,
                    &grid,
                    &out.ensemble,
                    &out.control,
                );
                write_json(&ctx.out_dir, "ensemble_summary.json", &summary)?;
                report.artifacts.push("ensemble_summary.json".into());
            }
            report.artifacts.push("report.json".into());
            if !out.adjoint.diagnostics.is_empty() {
                report.regression = Some(out.adjoint.diagnostics.clone());
            }
            report.summary = Some(out.summary);
            write_json(&ctx.out_dir, "report.json", &report)?;
            let s = report.summary.as_ref().expect("just set");
            say(
                ctx,
                &format!(
                    "solve {}: mode {:?}, {} iterations, cost {:.6e}, residual {:.3e}, {}",
                    ctx.problem.name,
                    s.mode,
                    s.iterations.len(),
                    s.final_cost,
                    s.final_residual,
                    if s.converged { "converged" } else { "not converged" },
                ),
            );
            Ok(())
        }
        Err(e) => {
            report.error = Some(ErrorReport {
                name: e.name().into(),
                message: e.to_string(),
            });
            report.artifacts.push("report.json".into());
            write_json(&ctx.out_dir, "report.json", &report)?;
            Err(CliError::Failed(format!("solve failed: {e}")))
        }
    }
}

// --------------------------------------------------------------- gradcheck

#[derive(Debug, Serialize, Deserialize)]
pub struct DirectionResult {
    pub pairing: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub schema_version: u32,
    pub problem: String,
    pub grid: config::GridConfig,
    pub fd_step: f64,
    pub tolerance: f64,
    pub common_random_numbers: bool,
    pub directions: Vec<DirectionResult>,
    pub max_rel_error: f64,
    pub pass: bool,
}

fn cmd_gradcheck(ctx: &Context) -> Result<(), CliError> {
    let gc = &ctx.config.gradcheck;
    let spec = &ctx.problem.spec;
    let grid = TimeGrid::for_problem(spec, ctx.config.grid.steps)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let n = ctx.config.grid.particles;
    let noise = Arc::new(draw_noise(spec, &grid, n, ctx.seed));
    let ctrl = ControlField::zeros(&grid, n, spec.control_dim);
    let solve_config = ctx.config.solve.to_core(ctx.seed);
    // The check compares against finite differences of the simulated cost,
    // so the driver always keeps the measure-derivative terms; the game-mode
    // adjoint is not the gradient of the social cost.
    let eval = cost_gradient(
        spec,
        &grid,
        &ctrl,
        &noise,
        &solve_config.basis,
        DriverMode::MeanField,
    )
    .map_err(|e| CliError::Failed(format!("gradient evaluation failed: {e}")))?;

    let mut dir_rng = rng::stream_rng(ctx.seed, rng::stream::DIRECTIONS);
    let mut directions = Vec::with_capacity(gc.directions);
    let mut max_rel: f64 = 0.0;
    for r in 0..gc.directions {
        // Coherent time profile shared by all particles plus per-particle
        // perturbations, so the pairing is O(1) rather than averaged away.
        let profile: Vec<Vec<f64>> = (0..grid.steps)
            .map(|_| (0..spec.control_dim).map(|_| rng::normal(&mut dir_rng)).collect())
            .collect();
        let mut pert = Vec::with_capacity(grid.steps);
        for _ in 0..grid.steps {
            let row: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    (0..spec.control_dim)
                        .map(|_| 0.3 * rng::normal(&mut dir_rng))
                        .collect()
                })
                .collect();
            pert.push(row);
        }
        let dir = ControlField::from_fn(&grid, n, |k, i| {
            mfc_core::nalgebra::DVector::from_fn(spec.control_dim, |c, _| profile[k][c] + pert[k][i][c])
        });
        let pairing = eval.gradient.inner_l2(&dir, &grid, noise.weights());

        let eps = gc.fd_step;
        let up = ctrl.add_scaled(&dir, eps);
        let dn = ctrl.add_scaled(&dir, -eps);
        let cost_at = |c: &ControlField, fresh: Option<u64>| -> Result<f64, CliError> {
            let nb = match fresh {
                None => Arc::clone(&noise),
                Some(s) => Arc::new(draw_noise(spec, &grid, n, s)),
            };
            let ens = simulate_forward(spec, &grid, c, &nb)
                .map_err(|e| CliError::Failed(e.to_string()))?;
            evaluate_cost(spec, &grid, &ens, c).map_err(|e| CliError::Failed(e.to_string()))
        };
        let (j_up, j_dn) = if gc.common_random_numbers {
            (cost_at(&up, None)?, cost_at(&dn, None)?)
        } else {
            // Deliberately decouple the noise: the check then measures Monte
            // Carlo variance instead of the derivative.
            (
                cost_at(&up, Some(ctx.seed.wrapping_add(1000 + 2 * r as u64)))?,
                cost_at(&dn, Some(ctx.seed.wrapping_add(1001 + 2 * r as u64)))?,
            )
        };
        let fd = (j_up - j_dn) / (2.0 * eps);
        let rel = (pairing - fd).abs() / (1.0 + fd.abs());
        max_rel = max_rel.max(rel);
        directions.push(DirectionResult {
            pairing,
            finite_difference: fd,
            rel_error: rel,
        });
    }

    let report = GradCheckReport {
        schema_version: SCHEMA_VERSION,
        problem: ctx.problem.name.clone(),
        grid: ctx.config.grid,
        fd_step: gc.fd_step,
        tolerance: gc.tolerance,
        common_random_numbers: gc.common_random_numbers,
        directions,
        max_rel_error: max_rel,
        pass: max_rel <= gc.tolerance,
    };
    write_json(&ctx.out_dir, "gradcheck.json", &report)?;
    say(
        ctx,
        &format!(
            "gradcheck {}: max relative error {:.3e} (tolerance {:.1e}) -> {}",
            ctx.problem.name,
            report.max_rel_error,
            report.tolerance,
            if report.pass { "pass" } else { "FAIL" }
        ),
    );
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "gradient check failed: max relative error {:.3e} exceeds {:.1e}",
            report.max_rel_error, report.tolerance
        )))
    }
}

// ------------------------------------------------------------------ oracle

#[derive(Debug, Serialize, Deserialize)]
pub struct OracleReport {
    pub schema_version: u32,
    pub problem: String,
    pub kind: OracleKind,
    pub substeps: usize,
    pub value: f64,
}

fn cmd_oracle(ctx: &Context) -> Result<(), CliError> {
    let lq = ctx.problem.lq.as_ref().ok_or_else(|| {
        CliError::Usage("oracle requires a linear-quadratic problem".into())
    })?;
    let grid = TimeGrid::for_problem(&ctx.problem.spec, ctx.config.grid.steps)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let substeps = ctx.config.oracle.substeps;
    let (kind, sol) = match ctx.config.solve.mode {
        SolveMode::Mfg => (
            OracleKind::MeanFieldGame,
            solve_lq_mfg(lq, &grid, substeps).map_err(|e| CliError::Failed(e.to_string()))?,
        ),
        _ => (
            OracleKind::MeanFieldControl,
            solve_lq_mfc(lq, &grid, substeps).map_err(|e| CliError::Failed(e.to_string()))?,
        ),
    };
    write_file(&ctx.out_dir, "gains.csv", &artifacts::gains_csv(&sol))?;
    let value = sol.value(
        &lq.initial_mean_vec(),
        &lq.initial_cov_matrix()
            .map_err(|e| CliError::Usage(e.to_string()))?,
    );
    let report = OracleReport {
        schema_version: SCHEMA_VERSION,
        problem: ctx.problem.name.clone(),
        kind,
        substeps,
        value,
    };
    write_json(&ctx.out_dir, "oracle.json", &report)?;
    say(
        ctx,
        &format!("oracle {}: {:?} value {:.6e}", ctx.problem.name, kind, value),
    );
    Ok(())
}

