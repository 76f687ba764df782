//! Coefficient callables and the `ProblemSpec` container.
//!
//! A problem is defined by user-supplied closures for the drift `f`, the
//! volatility columns `σ^j`, the running cost `g`, the terminal cost `g_T`,
//! and every derivative the adjoint system needs. Derivatives are supplied,
//! not computed: the validators in this module check them numerically.
//!
//! Conventions. Jacobians use rows = output components, columns = input
//! coordinates; `D_x f` is n×n, `D_v f` is n×d. Gradients of scalar costs are
//! column vectors. Measure derivatives come in two shapes:
//!
//! * the flat derivative `dF/dν(x,m,v,s)(ξ)` (scalar for costs, vector for
//!   the drift/volatility), defined through the mixture limit
//!   `(F(m + ε(m'−m)) − F(m))/ε → ∫ dF/dν d(m'−m)`, and
//! * its ξ-gradient `D_ξ dF/dν`, the object the adjoint driver integrates
//!   against the ensemble.
//!
//! The ξ-gradient kernels carry a structure tag: `Zero` for coefficients
//! independent of the measure, `CopyFree` when the kernel does not depend on
//! the integration (copy) variable — the linear-in-mean case, which reduces
//! the driver's double sum to a single pass — and `General` otherwise.

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha12Rng;

pub type State = DVector<f64>;
pub type Control = DVector<f64>;

type Meas = EmpiricalMeasure;

pub type DriftFn = Box<dyn Fn(&State, &Meas, &Control, f64) -> State + Send + Sync>;
pub type VolFn = Box<dyn Fn(&State, &Meas, &Control, f64) -> State + Send + Sync>;
pub type RunningCostFn = Box<dyn Fn(&State, &Meas, &Control, f64) -> f64 + Send + Sync>;
pub type TerminalCostFn = Box<dyn Fn(&State, &Meas) -> f64 + Send + Sync>;

pub type StateJacFn = Box<dyn Fn(&State, &Meas, &Control, f64) -> DMatrix<f64> + Send + Sync>;
pub type ControlJacFn = Box<dyn Fn(&State, &Meas, &Control, f64) -> DMatrix<f64> + Send + Sync>;
pub type StateGradFn = Box<dyn Fn(&State, &Meas, &Control, f64) -> DVector<f64> + Send + Sync>;
pub type ControlGradFn = Box<dyn Fn(&State, &Meas, &Control, f64) -> DVector<f64> + Send + Sync>;
pub type TerminalGradFn = Box<dyn Fn(&State, &Meas) -> DVector<f64> + Send + Sync>;

/// Flat derivative of a vector coefficient: `dF/dν(x,m,v,s)(ξ) ∈ R^n`.
pub type VectorFlatFn = Box<dyn Fn(&State, &Meas, &Control, f64, &State) -> State + Send + Sync>;
/// Flat derivative of the running cost: `dg/dν(x,m,v,s)(ξ) ∈ R`.
pub type ScalarFlatFn = Box<dyn Fn(&State, &Meas, &Control, f64, &State) -> f64 + Send + Sync>;
/// Flat derivative of the terminal cost: `dg_T/dν(x,m)(ξ) ∈ R`.
pub type TerminalFlatFn = Box<dyn Fn(&State, &Meas, &State) -> f64 + Send + Sync>;

/// Per-particle feedback minimizer `v̂(x, m, s; p, q)` solving `D_v L = 0`.
pub type FeedbackFn = Box<dyn Fn(&State, &Meas, f64, &State, &[State]) -> Control + Send + Sync>;
/// Initial sampler: one i.i.d. draw of the initial state.
pub type SamplerFn = Box<dyn Fn(&mut ChaCha12Rng) -> State + Send + Sync>;

/// `D_ξ dF/dν` for a vector-valued coefficient; n×n Jacobian in ξ
/// (rows = components of `F`).
pub enum MatrixKernel {
    /// Coefficient does not depend on the measure.
    Zero,
    /// Kernel independent of the copy variables `(x̄, v̄)`: `(m, s, ξ) -> n×n`.
    CopyFree(Box<dyn Fn(&Meas, f64, &State) -> DMatrix<f64> + Send + Sync>),
    /// Full form `(x̄, v̄, m, s)(ξ) -> n×n`.
    General(Box<dyn Fn(&State, &Control, &Meas, f64, &State) -> DMatrix<f64> + Send + Sync>),
}

/// `D_ξ dg/dν` for the running cost; vector in `R^n`.
pub enum VectorKernel {
    Zero,
    /// `(m, s, ξ) -> R^n`.
    CopyFree(Box<dyn Fn(&Meas, f64, &State) -> DVector<f64> + Send + Sync>),
    /// `(x̄, v̄, m, s)(ξ) -> R^n`.
    General(Box<dyn Fn(&State, &Control, &Meas, f64, &State) -> DVector<f64> + Send + Sync>),
}

/// `D_ξ dg_T/dν` for the terminal cost; vector in `R^n`.
pub enum TerminalKernel {
    Zero,
    /// `(m, ξ) -> R^n`.
    CopyFree(Box<dyn Fn(&Meas, &State) -> DVector<f64> + Send + Sync>),
    /// `(x̄, m)(ξ) -> R^n`.
    General(Box<dyn Fn(&State, &Meas, &State) -> DVector<f64> + Send + Sync>),
}

impl MatrixKernel {
    pub fn is_zero(&self) -> bool {
        matches!(self, MatrixKernel::Zero)
    }

    /// Evaluate at copy variables `(x̄, v̄)`, measure `m`, time `s`, point `ξ`.
    pub fn eval(
        &self,
        x_copy: &State,
        v_copy: &Control,
        m: &Meas,
        s: f64,
        xi: &State,
    ) -> Option<DMatrix<f64>> {
        match self {
            MatrixKernel::Zero => None,
            MatrixKernel::CopyFree(k) => Some(k(m, s, xi)),
            MatrixKernel::General(k) => Some(k(x_copy, v_copy, m, s, xi)),
        }
    }
}

impl VectorKernel {
    pub fn is_zero(&self) -> bool {
        matches!(self, VectorKernel::Zero)
    }

    pub fn eval(
        &self,
        x_copy: &State,
        v_copy: &Control,
        m: &Meas,
        s: f64,
        xi: &State,
    ) -> Option<DVector<f64>> {
        match self {
            VectorKernel::Zero => None,
            VectorKernel::CopyFree(k) => Some(k(m, s, xi)),
            VectorKernel::General(k) => Some(k(x_copy, v_copy, m, s, xi)),
        }
    }
}

impl TerminalKernel {
    pub fn is_zero(&self) -> bool {
        matches!(self, TerminalKernel::Zero)
    }

    pub fn eval(&self, x_copy: &State, m: &Meas, xi: &State) -> Option<DVector<f64>> {
        match self {
            TerminalKernel::Zero => None,
            TerminalKernel::CopyFree(k) => Some(k(m, xi)),
            TerminalKernel::General(k) => Some(k(x_copy, m, xi)),
        }
    }
}

/// Volatility columns `σ^j`, `j = 1..n`, or the zero volatility (the
/// deterministic mode of the pipeline).
pub enum Volatility {
    Zero,
    Columns {
        columns: Vec<VolFn>,
        dx: Vec<StateJacFn>,
        dv: Vec<ControlJacFn>,
        dnu: Vec<MatrixKernel>,
        flat: Vec<Option<VectorFlatFn>>,
    },
}

impl Volatility {
    pub fn is_zero(&self) -> bool {
        matches!(self, Volatility::Zero)
    }

    pub fn n_columns(&self) -> usize {
        match self {
            Volatility::Zero => 0,
            Volatility::Columns { columns, .. } => columns.len(),
        }
    }
}

/// A complete mean-field control problem: dynamics, costs, derivatives,
/// time horizon, and the initial-state sampler.
pub struct ProblemSpec {
    pub state_dim: usize,
    pub control_dim: usize,
    pub t0: f64,
    pub horizon: f64,
    /// Declared Lipschitz/growth constant for diagnostic bound checks.
    pub lipschitz_bound: f64,

    pub drift: DriftFn,
    pub drift_dx: StateJacFn,
    pub drift_dv: ControlJacFn,
    pub drift_dnu: MatrixKernel,
    pub drift_flat: Option<VectorFlatFn>,

    pub volatility: Volatility,

    pub running_cost: RunningCostFn,
    pub running_dx: StateGradFn,
    pub running_dv: ControlGradFn,
    pub running_dnu: VectorKernel,
    pub running_flat: Option<ScalarFlatFn>,

    pub terminal_cost: TerminalCostFn,
    pub terminal_dx: TerminalGradFn,
    pub terminal_dnu: TerminalKernel,
    pub terminal_flat: Option<TerminalFlatFn>,

    pub initial_sampler: SamplerFn,
    pub feedback: Option<FeedbackFn>,
}

impl ProblemSpec {
    pub fn builder(state_dim: usize, control_dim: usize, t0: f64, horizon: f64) -> ProblemSpecBuilder {
        ProblemSpecBuilder::new(state_dim, control_dim, t0, horizon)
    }

    pub fn is_deterministic(&self) -> bool {
        self.volatility.is_zero()
    }

    /// Whether any driver-side measure-derivative kernel is present. When
    /// false the adjoint driver skips the copy-term pass entirely, and the
    /// control and game modes run the same code path.
    pub fn has_measure_kernels(&self) -> bool {
        if !self.drift_dnu.is_zero() || !self.running_dnu.is_zero() {
            return true;
        }
        match &self.volatility {
            Volatility::Zero => false,
            Volatility::Columns { dnu, .. } => dnu.iter().any(|k| !k.is_zero()),
        }
    }

    /// Evaluate volatility column `j` (0-based).
    pub fn vol(&self, j: usize, x: &State, m: &Meas, v: &Control, s: f64) -> State {
        match &self.volatility {
            Volatility::Zero => DVector::zeros(self.state_dim),
            Volatility::Columns { columns, .. } => columns[j](x, m, v, s),
        }
    }
}

/// Builder for [`ProblemSpec`]; measure derivatives default to `Zero` and
/// flat derivatives to absent.
pub struct ProblemSpecBuilder {
    state_dim: usize,
    control_dim: usize,
    t0: f64,
    horizon: f64,
    lipschitz_bound: f64,
    drift: Option<DriftFn>,
    drift_dx: Option<StateJacFn>,
    drift_dv: Option<ControlJacFn>,
    drift_dnu: MatrixKernel,
    drift_flat: Option<VectorFlatFn>,
    volatility: Volatility,
    running_cost: Option<RunningCostFn>,
    running_dx: Option<StateGradFn>,
    running_dv: Option<ControlGradFn>,
    running_dnu: VectorKernel,
    running_flat: Option<ScalarFlatFn>,
    terminal_cost: Option<TerminalCostFn>,
    terminal_dx: Option<TerminalGradFn>,
    terminal_dnu: TerminalKernel,
    terminal_flat: Option<TerminalFlatFn>,
    initial_sampler: Option<SamplerFn>,
    feedback: Option<FeedbackFn>,
}

impl ProblemSpecBuilder {
    pub fn new(state_dim: usize, control_dim: usize, t0: f64, horizon: f64) -> Self {
        Self {
            state_dim,
            control_dim,
            t0,
            horizon,
            lipschitz_bound: 1.0,
            drift: None,
            drift_dx: None,
            drift_dv: None,
            drift_dnu: MatrixKernel::Zero,
            drift_flat: None,
            volatility: Volatility::Zero,
            running_cost: None,
            running_dx: None,
            running_dv: None,
            running_dnu: VectorKernel::Zero,
            running_flat: None,
            terminal_cost: None,
            terminal_dx: None,
            terminal_dnu: TerminalKernel::Zero,
            terminal_flat: None,
            initial_sampler: None,
            feedback: None,
        }
    }

    pub fn lipschitz_bound(mut self, l: f64) -> Self {
        self.lipschitz_bound = l;
        self
    }

    pub fn drift(
        mut self,
        f: impl Fn(&State, &Meas, &Control, f64) -> State + Send + Sync + 'static,
    ) -> Self {
        self.drift = Some(Box::new(f));
        self
    }

    pub fn drift_dx(
        mut self,
        f: impl Fn(&State, &Meas, &Control, f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.drift_dx = Some(Box::new(f));
        self
    }

    pub fn drift_dv(
        mut self,
        f: impl Fn(&State, &Meas, &Control, f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.drift_dv = Some(Box::new(f));
        self
    }

    pub fn drift_dnu(mut self, k: MatrixKernel) -> Self {
        self.drift_dnu = k;
        self
    }

    pub fn drift_flat(
        mut self,
        f: impl Fn(&State, &Meas, &Control, f64, &State) -> State + Send + Sync + 'static,
    ) -> Self {
        self.drift_flat = Some(Box::new(f));
        self
    }

    pub fn volatility(mut self, vol: Volatility) -> Self {
        self.volatility = vol;
        self
    }

    pub fn running_cost(
        mut self,
        f: impl Fn(&State, &Meas, &Control, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.running_cost = Some(Box::new(f));
        self
    }

    pub fn running_dx(
        mut self,
        f: impl Fn(&State, &Meas, &Control, f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.running_dx = Some(Box::new(f));
        self
    }

    pub fn running_dv(
        mut self,
        f: impl Fn(&State, &Meas, &Control, f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.running_dv = Some(Box::new(f));
        self
    }

    pub fn running_dnu(mut self, k: VectorKernel) -> Self {
        self.running_dnu = k;
        self
    }

    pub fn running_flat(
        mut self,
        f: impl Fn(&State, &Meas, &Control, f64, &State) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.running_flat = Some(Box::new(f));
        self
    }

    pub fn terminal_cost(
        mut self,
        f: impl Fn(&State, &Meas) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.terminal_cost = Some(Box::new(f));
        self
    }

    pub fn terminal_dx(
        mut self,
        f: impl Fn(&State, &Meas) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.terminal_dx = Some(Box::new(f));
        self
    }

    pub fn terminal_dnu(mut self, k: TerminalKernel) -> Self {
        self.terminal_dnu = k;
        self
    }

    pub fn terminal_flat(
        mut self,
        f: impl Fn(&State, &Meas, &State) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.terminal_flat = Some(Box::new(f));
        self
    }

    pub fn initial_sampler(
        mut self,
        f: impl Fn(&mut ChaCha12Rng) -> State + Send + Sync + 'static,
    ) -> Self {
        self.initial_sampler = Some(Box::new(f));
        self
    }

    pub fn feedback(
        mut self,
        f: impl Fn(&State, &Meas, f64, &State, &[State]) -> Control + Send + Sync + 'static,
    ) -> Self {
        self.feedback = Some(Box::new(f));
        self
    }

    pub fn build(self) -> Result<ProblemSpec> {
        if self.horizon <= self.t0 {
            return Err(Error::Config(format!(
                "horizon {} must exceed t0 {}",
                self.horizon, self.t0
            )));
        }
        if let Volatility::Columns { columns, dx, dv, dnu, flat } = &self.volatility {
            let n = self.state_dim;
            if columns.len() != n || dx.len() != n || dv.len() != n || dnu.len() != n || flat.len() != n
            {
                return Err(Error::Config(format!(
                    "volatility must supply {n} columns with matching derivative lists"
                )));
            }
        }
        let missing = |what: &str| Error::Config(format!("missing {what}"));
        Ok(ProblemSpec {
            state_dim: self.state_dim,
            control_dim: self.control_dim,
            t0: self.t0,
            horizon: self.horizon,
            lipschitz_bound: self.lipschitz_bound,
            drift: self.drift.ok_or_else(|| missing("drift"))?,
            drift_dx: self.drift_dx.ok_or_else(|| missing("drift_dx"))?,
            drift_dv: self.drift_dv.ok_or_else(|| missing("drift_dv"))?,
            drift_dnu: self.drift_dnu,
            drift_flat: self.drift_flat,
            volatility: self.volatility,
            running_cost: self.running_cost.ok_or_else(|| missing("running_cost"))?,
            running_dx: self.running_dx.ok_or_else(|| missing("running_dx"))?,
            running_dv: self.running_dv.ok_or_else(|| missing("running_dv"))?,
            running_dnu: self.running_dnu,
            running_flat: self.running_flat,
            terminal_cost: self.terminal_cost.ok_or_else(|| missing("terminal_cost"))?,
            terminal_dx: self.terminal_dx.ok_or_else(|| missing("terminal_dx"))?,
            terminal_dnu: self.terminal_dnu,
            terminal_flat: self.terminal_flat,
            initial_sampler: self
                .initial_sampler
                .ok_or_else(|| missing("initial_sampler"))?,
            feedback: self.feedback,
        })
    }
}
