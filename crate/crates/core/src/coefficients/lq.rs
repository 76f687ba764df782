//! Linear-quadratic problem family.
//!
//! Drift and volatility are affine in state, mean, and control:
//!
//! ```text
//! f(x,m,v,s)   = f0 + F1 x + F1m ∫y dm + F2 v
//! σ^j(x,m,v,s) = s0_j + S1_j x + S1m_j ∫y dm + S2_j v
//! ```
//!
//! with quadratic costs
//!
//! ```text
//! g   = (xᵀ Q x + x̄ᵀ Qm x̄ + vᵀ R v) / 2,    g_T = (xᵀ QT x + x̄ᵀ QTm x̄) / 2,
//! ```
//!
//! where `x̄ = ∫y dm`. The control penalty `R` must be symmetric with
//! smallest eigenvalue at least `2λ`, which is exactly the strong-convexity
//! modulus the optimizer's convexity checks quantify. All matrix entries are
//! constants (time-independent); matrices are stored row-major so the spec
//! can be written as a plain JSON document.

use super::types::{
    MatrixKernel, ProblemSpec, TerminalKernel, VectorKernel, VolFn, Volatility,
};
use crate::error::{Error, Result};
use crate::rng::normal_vector;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqSpec {
    pub state_dim: usize,
    pub control_dim: usize,
    pub t0: f64,
    pub horizon: f64,
    /// Declared bound on coefficient entries (diagnostics only).
    pub bound: f64,
    /// Strong-convexity modulus of the control penalty: `R ⪰ 2λ I`.
    pub lambda: f64,

    pub drift_offset: Vec<f64>,
    pub drift_state: Vec<Vec<f64>>,
    pub drift_mean: Vec<Vec<f64>>,
    pub drift_control: Vec<Vec<f64>>,

    /// One entry per volatility column; all four lists empty means zero
    /// volatility (deterministic dynamics).
    pub vol_offset: Vec<Vec<f64>>,
    pub vol_state: Vec<Vec<Vec<f64>>>,
    pub vol_mean: Vec<Vec<Vec<f64>>>,
    pub vol_control: Vec<Vec<Vec<f64>>>,

    pub cost_state: Vec<Vec<f64>>,
    pub cost_mean: Vec<Vec<f64>>,
    pub cost_control: Vec<Vec<f64>>,
    pub terminal_state: Vec<Vec<f64>>,
    pub terminal_mean: Vec<Vec<f64>>,

    pub initial_mean: Vec<f64>,
    pub initial_cov: Vec<Vec<f64>>,
}

fn to_matrix(rows: &[Vec<f64>], nrows: usize, ncols: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!(
            "{name} must be {nrows}x{ncols}"
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn zeros(nrows: usize, ncols: usize) -> Vec<Vec<f64>> {
    vec![vec![0.0; ncols]; nrows]
}

impl LqSpec {
    /// A scalar template with zero dynamics and costs; callers fill in the
    /// entries they need.
    pub fn scalar(t0: f64, horizon: f64, lambda: f64) -> Self {
        Self {
            state_dim: 1,
            control_dim: 1,
            t0,
            horizon,
            bound: 10.0,
            lambda,
            drift_offset: vec![0.0],
            drift_state: zeros(1, 1),
            drift_mean: zeros(1, 1),
            drift_control: zeros(1, 1),
            vol_offset: vec![],
            vol_state: vec![],
            vol_mean: vec![],
            vol_control: vec![],
            cost_state: zeros(1, 1),
            cost_mean: zeros(1, 1),
            cost_control: zeros(1, 1),
            terminal_state: zeros(1, 1),
            terminal_mean: zeros(1, 1),
            initial_mean: vec![0.0],
            initial_cov: vec![vec![1.0]],
        }
    }

    pub fn n_vol_columns(&self) -> usize {
        self.vol_offset.len()
    }

    pub fn f0(&self) -> DVector<f64> {
        DVector::from_vec(self.drift_offset.clone())
    }

    pub fn f1(&self) -> Result<DMatrix<f64>> {
        to_matrix(&self.drift_state, self.state_dim, self.state_dim, "drift_state")
    }

    pub fn f1_mean(&self) -> Result<DMatrix<f64>> {
        to_matrix(&self.drift_mean, self.state_dim, self.state_dim, "drift_mean")
    }

    pub fn f2(&self) -> Result<DMatrix<f64>> {
        to_matrix(&self.drift_control, self.state_dim, self.control_dim, "drift_control")
    }

    pub fn q(&self) -> Result<DMatrix<f64>> {
        to_matrix(&self.cost_state, self.state_dim, self.state_dim, "cost_state")
    }

    pub fn q_mean(&self) -> Result<DMatrix<f64>> {
        to_matrix(&self.cost_mean, self.state_dim, self.state_dim, "cost_mean")
    }

    pub fn r(&self) -> Result<DMatrix<f64>> {
        to_matrix(&self.cost_control, self.control_dim, self.control_dim, "cost_control")
    }

    pub fn qt(&self) -> Result<DMatrix<f64>> {
        to_matrix(&self.terminal_state, self.state_dim, self.state_dim, "terminal_state")
    }

    pub fn qt_mean(&self) -> Result<DMatrix<f64>> {
        to_matrix(&self.terminal_mean, self.state_dim, self.state_dim, "terminal_mean")
    }

    pub fn sigma0(&self, j: usize) -> DVector<f64> {
        DVector::from_vec(self.vol_offset[j].clone())
    }

    pub fn sigma1(&self, j: usize) -> Result<DMatrix<f64>> {
        to_matrix(&self.vol_state[j], self.state_dim, self.state_dim, "vol_state")
    }

    pub fn sigma1_mean(&self, j: usize) -> Result<DMatrix<f64>> {
        to_matrix(&self.vol_mean[j], self.state_dim, self.state_dim, "vol_mean")
    }

    pub fn sigma2(&self, j: usize) -> Result<DMatrix<f64>> {
        to_matrix(&self.vol_control[j], self.state_dim, self.control_dim, "vol_control")
    }

    pub fn initial_mean_vec(&self) -> DVector<f64> {
        DVector::from_vec(self.initial_mean.clone())
    }

    pub fn initial_cov_matrix(&self) -> Result<DMatrix<f64>> {
        to_matrix(&self.initial_cov, self.state_dim, self.state_dim, "initial_cov")
    }

    /// Structural validation: shapes, `R` symmetric with `R ⪰ 2λ I`, and
    /// entry magnitudes within the declared bound.
    pub fn validate(&self) -> Result<()> {
        if self.lambda <= 0.0 {
            return Err(Error::Convexity("lambda must be positive".into()));
        }
        let r = self.r()?;
        if (r.clone() - r.transpose()).amax() > 1e-12 {
            return Err(Error::Convexity("control penalty R is not symmetric".into()));
        }
        let shifted = r.clone() - DMatrix::identity(self.control_dim, self.control_dim) * (2.0 * self.lambda);
        let eig = shifted.symmetric_eigen();
        if eig.eigenvalues.iter().any(|&e| e < -1e-10) {
            return Err(Error::Convexity(format!(
                "R - 2 lambda I has negative eigenvalue {:.3e}",
                eig.eigenvalues.min()
            )));
        }
        let nv = self.n_vol_columns();
        if self.vol_state.len() != nv || self.vol_mean.len() != nv || self.vol_control.len() != nv {
            return Err(Error::Config(
                "volatility coefficient lists have inconsistent lengths".into(),
            ));
        }
        if nv != 0 && nv != self.state_dim {
            return Err(Error::Config(format!(
                "expected {} volatility columns or none, got {nv}",
                self.state_dim
            )));
        }
        // Exercise every accessor so shape errors surface here.
        let mats = [
            self.f1()?,
            self.f1_mean()?,
            self.f2()?,
            self.q()?,
            self.q_mean()?,
            self.qt()?,
            self.qt_mean()?,
            self.initial_cov_matrix()?,
        ];
        let mut max_entry: f64 = self.drift_offset.iter().fold(0.0, |a, x| a.max(x.abs()));
        for m in &mats {
            max_entry = max_entry.max(m.amax());
        }
        for j in 0..nv {
            max_entry = max_entry
                .max(self.sigma0(j).amax())
                .max(self.sigma1(j)?.amax())
                .max(self.sigma1_mean(j)?.amax())
                .max(self.sigma2(j)?.amax());
        }
        if max_entry > self.bound {
            return Err(Error::Config(format!(
                "coefficient entry {max_entry} exceeds declared bound {}",
                self.bound
            )));
        }
        Ok(())
    }
}

/// Square root of a PSD matrix for sampling; tolerates singular covariances.
fn psd_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = cov.clone().symmetric_eigen();
    let n = cov.nrows();
    let mut root = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = eig.eigenvalues[k].max(0.0).sqrt();
        let col = eig.eigenvectors.column(k);
        for i in 0..n {
            for j in 0..n {
                root[(i, j)] += lam * col[i] * eig.eigenvectors[(j, k)];
            }
        }
    }
    root
}

fn matrix_kernel(m: DMatrix<f64>) -> MatrixKernel {
    if m.amax() == 0.0 {
        MatrixKernel::Zero
    } else {
        MatrixKernel::CopyFree(Box::new(move |_m, _s, _xi| m.clone()))
    }
}

/// Assemble a [`ProblemSpec`] with analytically exact derivatives from an LQ
/// description.
pub fn lq_to_problem(spec: &LqSpec) -> Result<ProblemSpec> {
    spec.validate()?;
    let n = spec.state_dim;
    let d = spec.control_dim;

    let f0 = spec.f0();
    let f1 = spec.f1()?;
    let f1m = spec.f1_mean()?;
    let f2 = spec.f2()?;
    let q = spec.q()?;
    let qm = spec.q_mean()?;
    let r = spec.r()?;
    let qt = spec.qt()?;
    let qtm = spec.qt_mean()?;

    let nv = spec.n_vol_columns();
    let volatility = if nv == 0 {
        Volatility::Zero
    } else {
        let mut columns: Vec<VolFn> = Vec::with_capacity(nv);
        let mut dx: Vec<super::types::StateJacFn> = Vec::with_capacity(nv);
        let mut dv: Vec<super::types::ControlJacFn> = Vec::with_capacity(nv);
        let mut dnu: Vec<MatrixKernel> = Vec::with_capacity(nv);
        let mut flat: Vec<Option<super::types::VectorFlatFn>> = Vec::with_capacity(nv);
        for j in 0..nv {
            let s0 = spec.sigma0(j);
            let s1 = spec.sigma1(j)?;
            let s1m = spec.sigma1_mean(j)?;
            let s2 = spec.sigma2(j)?;
            {
                let (s0, s1, s1m, s2) = (s0.clone(), s1.clone(), s1m.clone(), s2.clone());
                columns.push(Box::new(move |x, m, v, _s| {
                    &s0 + &s1 * x + &s1m * m.mean() + &s2 * v
                }));
            }
            {
                let s1 = s1.clone();
                dx.push(Box::new(move |_x, _m, _v, _s| s1.clone()));
            }
            {
                let s2 = s2.clone();
                dv.push(Box::new(move |_x, _m, _v, _s| s2.clone()));
            }
            dnu.push(matrix_kernel(s1m.clone()));
            flat.push(Some(Box::new(move |_x, _m, _v, _s, xi| &s1m * xi)));
        }
        Volatility::Columns { columns, dx, dv, dnu, flat }
    };

    // Feedback minimizer: D_v L = F2ᵀ p + Σ_j S2_jᵀ q^j + R v = 0.
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Convexity("control penalty R is not positive definite".into()))?;
    let fb_f2 = f2.clone();
    let fb_s2: Vec<DMatrix<f64>> = (0..nv).map(|j| spec.sigma2(j).unwrap()).collect();
    let feedback = move |_x: &DVector<f64>,
                         _m: &crate::measure::EmpiricalMeasure,
                         _s: f64,
                         p: &DVector<f64>,
                         qcols: &[DVector<f64>]| {
        let mut rhs = fb_f2.tr_mul(p);
        for (s2, qj) in fb_s2.iter().zip(qcols) {
            rhs += s2.tr_mul(qj);
        }
        -r_inv.solve(&rhs)
    };

    let mean_cov_sampler = {
        let mu = spec.initial_mean_vec();
        let root = psd_sqrt(&spec.initial_cov_matrix()?);
        move |rng: &mut rand_chacha::ChaCha12Rng| &mu + &root * normal_vector(rng, n)
    };

    let b = {
        let (f0, f1, f1m, f2) = (f0.clone(), f1.clone(), f1m.clone(), f2.clone());
        let (q_g, qm_g, r_g) = (q.clone(), qm.clone(), r.clone());
        let (qt_g, qtm_g) = (qt.clone(), qtm.clone());
        ProblemSpec::builder(n, d, spec.t0, spec.horizon)
            .lipschitz_bound(spec.bound)
            .drift(move |x, m, v, _s| &f0 + &f1 * x + &f1m * m.mean() + &f2 * v)
            .drift_dx({
                let f1 = spec.f1()?;
                move |_x, _m, _v, _s| f1.clone()
            })
            .drift_dv({
                let f2 = spec.f2()?;
                move |_x, _m, _v, _s| f2.clone()
            })
            .drift_dnu(matrix_kernel(spec.f1_mean()?))
            .drift_flat({
                let f1m = spec.f1_mean()?;
                move |_x, _m, _v, _s, xi| &f1m * xi
            })
            .volatility(volatility)
            .running_cost(move |x, m, v, _s| {
                0.5 * ((&q_g * x).dot(x) + (&qm_g * m.mean()).dot(m.mean()) + (&r_g * v).dot(v))
            })
            .running_dx({
                let q = spec.q()?;
                move |x, _m, _v, _s| &q * x
            })
            .running_dv({
                let r = spec.r()?;
                move |_x, _m, v, _s| &r * v
            })
            .running_dnu({
                let qm = spec.q_mean()?;
                if qm.amax() == 0.0 {
                    VectorKernel::Zero
                } else {
                    VectorKernel::CopyFree(Box::new(move |m, _s, _xi| &qm * m.mean()))
                }
            })
            .running_flat({
                let qm = spec.q_mean()?;
                move |_x, m, _v, _s, xi| (&qm * m.mean()).dot(xi)
            })
            .terminal_cost(move |x, m| {
                0.5 * ((&qt_g * x).dot(x) + (&qtm_g * m.mean()).dot(m.mean()))
            })
            .terminal_dx({
                let qt = spec.qt()?;
                move |x, _m| &qt * x
            })
            .terminal_dnu({
                let qtm = spec.qt_mean()?;
                if qtm.amax() == 0.0 {
                    TerminalKernel::Zero
                } else {
                    TerminalKernel::CopyFree(Box::new(move |m, _xi| &qtm * m.mean()))
                }
            })
            .terminal_flat({
                let qtm = spec.qt_mean()?;
                move |_x, m, xi| (&qtm * m.mean()).dot(xi)
            })
            .initial_sampler(mean_cov_sampler)
            .feedback(feedback)
    };
    b.build()
}
