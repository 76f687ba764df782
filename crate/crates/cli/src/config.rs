//! Run configuration: a single JSON document with a schema version. Unknown
//! keys are rejected so experiment records stay diffable and unambiguous.

use mfc_core::adjoint::RegressionBasis;
use mfc_core::coefficients::{lq_to_problem, LqSpec, ProblemSpec};
use mfc_core::error::Error;
use mfc_core::optimizer::{SolveConfig, SolveMode};
use mfc_core::problems::builtin_problem;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub checks: ChecksConfig,
    #[serde(default)]
    pub gradcheck: GradCheckConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// A registered instance, by name.
    Builtin { name: String },
    /// An inline linear-quadratic description.
    Lq { spec: LqSpec },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub steps: usize,
    pub particles: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveSection {
    pub mode: SolveMode,
    pub max_iters: usize,
    pub step_size: f64,
    pub backtrack: f64,
    pub tol_grad: f64,
    pub tol_cost: f64,
    pub damping: f64,
    pub basis: RegressionBasis,
}

impl Default for SolveSection {
    fn default() -> Self {
        let d = SolveConfig::default();
        Self {
            mode: d.mode,
            max_iters: d.max_iters,
            step_size: d.step_size,
            backtrack: d.backtrack,
            tol_grad: d.tol_grad,
            tol_cost: d.tol_cost,
            damping: d.damping,
            basis: d.basis,
        }
    }
}

impl SolveSection {
    /// Materialize with the run seed (all randomness derives from it).
    pub fn to_core(&self, seed: u64) -> SolveConfig {
        SolveConfig {
            mode: self.mode,
            max_iters: self.max_iters,
            step_size: self.step_size,
            backtrack: self.backtrack,
            tol_grad: self.tol_grad,
            tol_cost: self.tol_cost,
            damping: self.damping,
            seed,
            basis: self.basis.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: Option<String>,
    pub convergence: bool,
    pub control: bool,
    pub trajectory: bool,
    pub adjoint: bool,
    pub ensemble_summary: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: None,
            convergence: true,
            control: true,
            trajectory: false,
            adjoint: false,
            ensemble_summary: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksConfig {
    pub pointwise: bool,
    pub measure: bool,
    /// `null` to skip, otherwise "control_only" or "joint".
    pub convexity: Option<mfc_core::coefficients::ConvexityMode>,
    pub monotonicity: Vec<mfc_core::coefficients::MonotonicityMode>,
    pub samples: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Strong-convexity modulus asserted by the convexity check.
    pub lambda: f64,
    pub ensemble_size: usize,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self {
            pointwise: true,
            measure: true,
            convexity: None,
            monotonicity: Vec::new(),
            samples: 30,
            step: 1e-5,
            tolerance: 1e-6,
            lambda: 0.5,
            ensemble_size: 24,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub directions: usize,
    pub fd_step: f64,
    pub tolerance: f64,
    /// Reuse one noise realization for all cost evaluations. Disabling this
    /// demonstrates why the check needs common random numbers.
    pub common_random_numbers: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            directions: 5,
            fd_step: 1e-4,
            tolerance: 1e-4,
            common_random_numbers: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub substeps: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { substeps: 10 }
    }
}

/// A problem resolved from the configuration.
pub struct ResolvedProblem {
    pub name: String,
    pub spec: ProblemSpec,
    pub lq: Option<LqSpec>,
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self, Error> {
        let config: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        if config.grid.steps == 0 || config.grid.particles == 0 {
            return Err(Error::Config(
                "grid must have at least one step and one particle".into(),
            ));
        }
        Ok(config)
    }

    pub fn resolve_problem(&self) -> Result<ResolvedProblem, Error> {
        match &self.problem {
            ProblemConfig::Builtin { name } => {
                let b = builtin_problem(name)?;
                Ok(ResolvedProblem {
                    name: b.name.to_string(),
                    spec: b.spec,
                    lq: b.lq,
                })
            }
            ProblemConfig::Lq { spec } => Ok(ResolvedProblem {
                name: "lq".to_string(),
                spec: lq_to_problem(spec)?,
                lq: Some(spec.clone()),
            }),
        }
    }
}
