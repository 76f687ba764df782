//! Pointwise Lagrangian and its derivatives.
//!
//! ```text
//! L(x, m, v, s; p, q) = p·f(x,m,v,s) + Σ_j q^j·σ^j(x,m,v,s) + g(x,m,v,s)
//! ```
//!
//! The state derivative of the ensemble Lagrangian splits into a local part
//! (`D_x f`ᵀp + Σ_j `D_x σ^j`ᵀq^j + `D_x g`) and independent-copy coupling
//! terms that integrate the measure-derivative kernels over the ensemble,
//! with the empirical measure playing both the role of the law and of the
//! independent copy.

use crate::coefficients::{MatrixKernel, ProblemSpec, VectorKernel, Volatility};
use crate::measure::EmpiricalMeasure;
use nalgebra::DVector;

/// Per-particle adjoint values: `p ∈ R^n` and the diffusion loadings
/// `q^j ∈ R^n`, one per volatility column (empty in deterministic mode).
#[derive(Debug, Clone)]
pub struct AdjointPoint {
    pub p: DVector<f64>,
    pub q: Vec<DVector<f64>>,
}

impl AdjointPoint {
    pub fn new(p: DVector<f64>, q: Vec<DVector<f64>>) -> Self {
        Self { p, q }
    }

    pub fn deterministic(p: DVector<f64>) -> Self {
        Self { p, q: Vec::new() }
    }
}

/// `L = p·f + Σ_j q^j·σ^j + g` evaluated pointwise.
pub fn eval_l(
    spec: &ProblemSpec,
    x: &DVector<f64>,
    m: &EmpiricalMeasure,
    v: &DVector<f64>,
    s: f64,
    ap: &AdjointPoint,
) -> f64 {
    let mut val = ap.p.dot(&(spec.drift)(x, m, v, s)) + (spec.running_cost)(x, m, v, s);
    if let Volatility::Columns { columns, .. } = &spec.volatility {
        for (j, col) in columns.iter().enumerate() {
            if let Some(qj) = ap.q.get(j) {
                val += qj.dot(&col(x, m, v, s));
            }
        }
    }
    val
}

/// Control gradient `D_v L = (D_v f)ᵀ p + Σ_j (D_v σ^j)ᵀ q^j + D_v g`.
pub fn grad_v_l(
    spec: &ProblemSpec,
    x: &DVector<f64>,
    m: &EmpiricalMeasure,
    v: &DVector<f64>,
    s: f64,
    ap: &AdjointPoint,
) -> DVector<f64> {
    let mut grad = (spec.drift_dv)(x, m, v, s).tr_mul(&ap.p) + (spec.running_dv)(x, m, v, s);
    if let Volatility::Columns { dv, .. } = &spec.volatility {
        for (j, dvj) in dv.iter().enumerate() {
            if let Some(qj) = ap.q.get(j) {
                grad += dvj(x, m, v, s).tr_mul(qj);
            }
        }
    }
    grad
}

/// Local part of the state derivative:
/// `(D_x f)ᵀ p + Σ_j (D_x σ^j)ᵀ q^j + D_x g`, measure held fixed.
pub fn grad_x_l_local(
    spec: &ProblemSpec,
    x: &DVector<f64>,
    m: &EmpiricalMeasure,
    v: &DVector<f64>,
    s: f64,
    ap: &AdjointPoint,
) -> DVector<f64> {
    let mut grad = (spec.drift_dx)(x, m, v, s).tr_mul(&ap.p) + (spec.running_dx)(x, m, v, s);
    if let Volatility::Columns { dx, .. } = &spec.volatility {
        for (j, dxj) in dx.iter().enumerate() {
            if let Some(qj) = ap.q.get(j) {
                grad += dxj(x, m, v, s).tr_mul(qj);
            }
        }
    }
    grad
}

/// Independent-copy coupling terms of the ensemble state derivative. For
/// particle `i`:
///
/// ```text
/// Σ_y w_y [ (D_ξ df/dν(X_y, m, v_y, s)(X_i))ᵀ P_y
///         + Σ_j (D_ξ dσ^j/dν(X_y, m, v_y, s)(X_i))ᵀ Q^j_y
///         + D_ξ dg/dν(X_y, m, v_y, s)(X_i) ]
/// ```
///
/// Copy-free kernels collapse the double sum: the drift/volatility terms
/// contract against the weighted adjoint means, the cost term against total
/// weight one. Coefficients independent of the measure contribute nothing.
/// The inner sum runs in ascending particle order.
pub fn meanfield_driver_terms(
    spec: &ProblemSpec,
    xs: &[DVector<f64>],
    vs: &[DVector<f64>],
    adjoints: &[AdjointPoint],
    m: &EmpiricalMeasure,
    s: f64,
) -> Vec<DVector<f64>> {
    let n = spec.state_dim;
    let npart = xs.len();
    assert_eq!(vs.len(), npart, "control slice length mismatch");
    assert_eq!(adjoints.len(), npart, "adjoint slice length mismatch");
    assert_eq!(m.len(), npart, "measure atom count mismatch");
    let w = m.weights();
    let mut out = vec![DVector::zeros(n); npart];

    // Drift kernel against P.
    match &spec.drift_dnu {
        MatrixKernel::Zero => {}
        MatrixKernel::CopyFree(k) => {
            let mut p_mean = DVector::zeros(n);
            for (ap, wy) in adjoints.iter().zip(w) {
                p_mean.axpy(*wy, &ap.p, 1.0);
            }
            for (i, xi) in xs.iter().enumerate() {
                out[i] += k(m, s, xi).tr_mul(&p_mean);
            }
        }
        MatrixKernel::General(k) => {
            for (i, xi) in xs.iter().enumerate() {
                let mut acc = DVector::zeros(n);
                for y in 0..npart {
                    acc += k(&xs[y], &vs[y], m, s, xi).tr_mul(&adjoints[y].p) * w[y];
                }
                out[i] += acc;
            }
        }
    }

    // Volatility kernels against Q^j.
    if let Volatility::Columns { dnu, .. } = &spec.volatility {
        for (j, kernel) in dnu.iter().enumerate() {
            match kernel {
                MatrixKernel::Zero => {}
                MatrixKernel::CopyFree(k) => {
                    let mut q_mean = DVector::zeros(n);
                    for (ap, wy) in adjoints.iter().zip(w) {
                        if let Some(qj) = ap.q.get(j) {
                            q_mean.axpy(*wy, qj, 1.0);
                        }
                    }
                    for (i, xi) in xs.iter().enumerate() {
                        out[i] += k(m, s, xi).tr_mul(&q_mean);
                    }
                }
                MatrixKernel::General(k) => {
                    for (i, xi) in xs.iter().enumerate() {
                        let mut acc = DVector::zeros(n);
                        for y in 0..npart {
                            if let Some(qj) = adjoints[y].q.get(j) {
                                acc += k(&xs[y], &vs[y], m, s, xi).tr_mul(qj) * w[y];
                            }
                        }
                        out[i] += acc;
                    }
                }
            }
        }
    }

    // Running-cost kernel; weights sum to one in the copy-free case.
    match &spec.running_dnu {
        VectorKernel::Zero => {}
        VectorKernel::CopyFree(k) => {
            for (i, xi) in xs.iter().enumerate() {
                out[i] += k(m, s, xi);
            }
        }
        VectorKernel::General(k) => {
            for (i, xi) in xs.iter().enumerate() {
                let mut acc = DVector::zeros(n);
                for y in 0..npart {
                    acc.axpy(w[y], &k(&xs[y], &vs[y], m, s, xi), 1.0);
                }
                out[i] += acc;
            }
        }
    }

    out
}
