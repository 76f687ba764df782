//! Backward solution of the adjoint equation by least-squares Monte Carlo.
//!
//! Walking backward from the terminal gradient, each step regresses the
//! adjoint targets on polynomial features of the current states, which
//! approximates conditional expectation with respect to the particle's own
//! filtration:
//!
//! ```text
//! Q^j_i(t_k) = Regress[ (P(t_{k+1}) - E[P(t_{k+1})|X_k]) ΔW^j_i / Δ | φ(X_i(t_k)) ]
//! P_i(t_k)   = Regress[ P_i(t_{k+1}) + Driver_i(t_k) Δ     | φ(X_i(t_k)) ]
//! ```
//!
//! The driver combines the local state-gradient of the Lagrangian with the
//! independent-copy coupling terms, evaluated at the regressed predictor of
//! `P(t_{k+1})` and the same-step `Q` (explicit backward Euler, one pass).
//! Centering the Q-target by the regressed predictor leaves its conditional
//! expectation unchanged and removes the dominant `O(1/Δ)` variance term.
//!
//! Zero-volatility ensembles take an exact pass-through recursion instead:
//! every quantity is a deterministic function of the initial state, so
//! conditional expectation is the identity, `Q ≡ 0`, and
//! `P_i(t_k) = P_i(t_{k+1}) + Driver_i(t_k) Δ` without projection error.
//!
//! In game mode the measure-derivative terms are omitted from both the
//! terminal condition and the driver; with measure-independent coefficients
//! the two modes coincide exactly.

use crate::coefficients::ProblemSpec;
use crate::error::{Error, Result};
use crate::forward::{ControlField, PathEnsemble, TimeGrid};
use crate::lagrangian::{grad_v_l, grad_x_l_local, meanfield_driver_terms, AdjointPoint};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

/// Whether the adjoint driver keeps the measure-derivative (independent-copy)
/// terms. `MeanField` is the control problem; `Game` freezes the population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverMode {
    MeanField,
    Game,
}

/// Estimator for the diffusion loadings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QEstimator {
    /// Regress the centered increment-weighted target
    /// `(P_{k+1} - P̃_k) ΔW^j / Δ` on `φ(X_k)`.
    #[default]
    CenteredIncrement,
    /// Joint regression of `P_{k+1}` on `[φ(X_k), φ(X_k) ΔW^1, ..]`; the
    /// increment blocks estimate `Q^j` directly.
    JointIncrement,
}

/// Polynomial feature map for the cross-particle regressions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionBasis {
    /// Total polynomial degree of the monomial features (constant included).
    pub degree: usize,
    /// Ridge parameter is `ridge_scale * N`.
    pub ridge_scale: f64,
    pub q_estimator: QEstimator,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self {
            degree: 2,
            ridge_scale: 1e-8,
            q_estimator: QEstimator::default(),
        }
    }
}

impl RegressionBasis {
    pub fn with_degree(degree: usize) -> Self {
        Self {
            degree,
            ..Self::default()
        }
    }

    /// Monomial exponent multi-indices up to the configured degree, in a
    /// fixed (graded-lexicographic) order.
    fn exponents(&self, dim: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut current = vec![0usize; dim];
        fn rec(out: &mut Vec<Vec<usize>>, current: &mut Vec<usize>, pos: usize, remaining: usize) {
            if pos == current.len() {
                out.push(current.clone());
                return;
            }
            for e in 0..=remaining {
                current[pos] = e;
                rec(out, current, pos + 1, remaining - e);
            }
            current[pos] = 0;
        }
        for total in 0..=self.degree {
            let before = out.len();
            rec(&mut out, &mut current, 0, total);
            // Keep only exponents of exact total degree to avoid duplicates.
            let kept = prune_exact(&mut out[before..], total);
            out.truncate(before + kept);
        }
        out
    }

    pub fn feature_count(&self, dim: usize) -> usize {
        self.exponents(dim).len()
    }

    /// Feature matrix Φ (N×B) for the given states.
    fn features(&self, states: &[DVector<f64>]) -> DMatrix<f64> {
        let dim = states[0].len();
        let exps = self.exponents(dim);
        let mut phi = DMatrix::zeros(states.len(), exps.len());
        for (i, x) in states.iter().enumerate() {
            for (b, e) in exps.iter().enumerate() {
                let mut val = 1.0;
                for (c, &p) in e.iter().enumerate() {
                    for _ in 0..p {
                        val *= x[c];
                    }
                }
                phi[(i, b)] = val;
            }
        }
        phi
    }
}

fn prune_exact(exps: &mut [Vec<usize>], total: usize) -> usize {
    let mut keep = 0;
    for i in 0..exps.len() {
        if exps[i].iter().sum::<usize>() == total {
            exps.swap(keep, i);
            keep += 1;
        }
    }
    keep
}

/// Per-step regression diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionDiagnostics {
    pub step: usize,
    /// RMS residual of the P-regression.
    pub p_residual: f64,
    /// RMS residual of the Q-regressions (0 in deterministic mode).
    pub q_residual: f64,
    /// Squared ratio of extreme Cholesky pivots of the Gram matrix.
    pub condition: f64,
}

/// Per-particle adjoint trajectories `P_i(t_k)`, `Q^j_i(t_k)`.
pub struct AdjointEnsemble {
    /// `p[k][i]` for `k = 0..K`.
    pub p: Vec<Vec<DVector<f64>>>,
    /// `q[k][i][j]` for `k = 0..K-1`; empty inner lists in deterministic mode.
    pub q: Vec<Vec<Vec<DVector<f64>>>>,
    pub diagnostics: Vec<RegressionDiagnostics>,
}

impl AdjointEnsemble {
    /// Adjoint slice `(P_i(t_k), Q_i(t_k))` for same-time evaluations.
    pub fn point(&self, k: usize, i: usize) -> AdjointPoint {
        AdjointPoint::new(self.p[k][i].clone(), self.q[k][i].clone())
    }

    /// Adjoint slice for step-`k` duality pairings: the drift term pairs with
    /// `P(t_{k+1})` (the exact transpose of the explicit Euler step) and the
    /// diffusion term with the step-`k` loadings.
    pub fn dual_point(&self, k: usize, i: usize) -> AdjointPoint {
        AdjointPoint::new(self.p[k + 1][i].clone(), self.q[k][i].clone())
    }

    /// Discrete `sup_k` of the ensemble-norm of `P`.
    pub fn p_sup_norm(&self, weights: &[f64]) -> f64 {
        self.p
            .iter()
            .map(|row| {
                row.iter()
                    .zip(weights)
                    .map(|(p, w)| w * p.norm_squared())
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Terminal slice of the adjoint:
/// `D_x g_T(X_i(T), μ_K) + Σ_y w_y D_ξ dg_T/dν(X_y(T), μ_K)(X_i(T))`,
/// the copy sum omitted in game mode.
pub fn terminal_gradient(
    spec: &ProblemSpec,
    ens: &PathEnsemble,
    mode: DriverMode,
) -> Vec<DVector<f64>> {
    let k_t = ens.steps();
    let mu = ens.measure(k_t);
    let xs = mu.points();
    let w = mu.weights();
    let mut out: Vec<DVector<f64>> = xs.iter().map(|x| (spec.terminal_dx)(x, mu)).collect();
    if mode == DriverMode::MeanField && !spec.terminal_dnu.is_zero() {
        use crate::coefficients::TerminalKernel;
        match &spec.terminal_dnu {
            TerminalKernel::Zero => {}
            TerminalKernel::CopyFree(k) => {
                for (i, xi) in xs.iter().enumerate() {
                    out[i] += k(mu, xi);
                }
            }
            TerminalKernel::General(k) => {
                for (i, xi) in xs.iter().enumerate() {
                    let mut acc = DVector::zeros(spec.state_dim);
                    for (y, wy) in xs.iter().zip(w) {
                        acc.axpy(*wy, &k(y, mu, xi), 1.0);
                    }
                    out[i] += acc;
                }
            }
        }
    }
    out
}

struct StepRegression {
    phi: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    condition: f64,
}

impl StepRegression {
    fn build(basis: &RegressionBasis, states: &[DVector<f64>], step: usize) -> Result<Self> {
        let n = states.len();
        let b = basis.feature_count(states[0].len());
        if b * 4 > n {
            return Err(Error::Regression {
                step,
                reason: format!("basis size {b} exceeds N/4 = {}", n / 4),
            });
        }
        let phi = basis.features(states);
        let mut gram = phi.tr_mul(&phi);
        let ridge = basis.ridge_scale * n as f64;
        for d in 0..b {
            gram[(d, d)] += ridge;
        }
        let chol = gram.cholesky().ok_or_else(|| Error::Regression {
            step,
            reason: "singular normal equations".into(),
        })?;
        let diag: Vec<f64> = (0..b).map(|i| chol.l_dirty()[(i, i)]).collect();
        let dmax = diag.iter().fold(f64::MIN, |a, &x| a.max(x));
        let dmin = diag.iter().fold(f64::MAX, |a, &x| a.min(x));
        let condition = (dmax / dmin).powi(2);
        Ok(Self {
            phi,
            chol,
            condition,
        })
    }

    /// Fitted values of the regression of `targets` (one vector per particle)
    /// on the features; also returns the RMS residual.
    fn fit(&self, targets: &[DVector<f64>]) -> (Vec<DVector<f64>>, f64) {
        let n = targets.len();
        let dim = targets[0].len();
        let mut rhs = DMatrix::zeros(self.phi.ncols(), dim);
        // Φᵀ Y, accumulated in particle order.
        for (i, t) in targets.iter().enumerate() {
            for b in 0..self.phi.ncols() {
                for c in 0..dim {
                    rhs[(b, c)] += self.phi[(i, b)] * t[c];
                }
            }
        }
        let beta = self.chol.solve(&rhs);
        let fitted_mat = &self.phi * &beta;
        let mut fitted = Vec::with_capacity(n);
        let mut res_sq = 0.0;
        for i in 0..n {
            let mut f = DVector::zeros(dim);
            for c in 0..dim {
                f[c] = fitted_mat[(i, c)];
                let r = targets[i][c] - f[c];
                res_sq += r * r;
            }
            fitted.push(f);
        }
        (fitted, (res_sq / n as f64).sqrt())
    }
}

/// Assemble the full driver at step `k` from the adjoint predictors.
fn driver_at_step(
    spec: &ProblemSpec,
    ens: &PathEnsemble,
    ctrl: &ControlField,
    grid: &TimeGrid,
    k: usize,
    p_pred: &[DVector<f64>],
    q_step: &[Vec<DVector<f64>>],
    mode: DriverMode,
) -> Vec<DVector<f64>> {
    let mu = ens.measure(k);
    let xs = mu.points();
    let t = grid.node(k);
    let n_particles = xs.len();
    let adjoints: Vec<AdjointPoint> = (0..n_particles)
        .map(|i| AdjointPoint::new(p_pred[i].clone(), q_step[i].clone()))
        .collect();
    let mut driver: Vec<DVector<f64>> = (0..n_particles)
        .map(|i| grad_x_l_local(spec, &xs[i], mu, &ctrl.values[k][i], t, &adjoints[i]))
        .collect();
    if mode == DriverMode::MeanField && spec.has_measure_kernels() {
        let copy = meanfield_driver_terms(spec, xs, &ctrl.values[k], &adjoints, mu, t);
        for (d, c) in driver.iter_mut().zip(copy) {
            *d += c;
        }
    }
    driver
}

/// Backward least-squares Monte Carlo pass producing per-particle `(P, Q)`.
///
/// Requires the ensemble simulated with stored increments. Deterministic
/// given its inputs.
pub fn solve_adjoint(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    ens: &PathEnsemble,
    ctrl: &ControlField,
    basis: &RegressionBasis,
    mode: DriverMode,
) -> Result<AdjointEnsemble> {
    if ens.steps() != grid.steps || ctrl.steps() != grid.steps {
        return Err(Error::Dimension(
            "ensemble, control, and grid step counts differ".into(),
        ));
    }
    if spec.is_deterministic() || ens.noise().is_zero_noise() {
        return solve_adjoint_deterministic(spec, grid, ens, ctrl, mode);
    }

    let n_particles = ens.n_particles();
    let n_vol = spec.volatility.n_columns();
    let k_steps = grid.steps;
    let dt = grid.dt();

    let mut p = vec![Vec::new(); k_steps + 1];
    let mut q = vec![Vec::new(); k_steps];
    let mut diagnostics = Vec::with_capacity(k_steps);
    p[k_steps] = terminal_gradient(spec, ens, mode);

    for k in (0..k_steps).rev() {
        let reg = StepRegression::build(basis, ens.states(k), k)?;
        let p_next = &p[k + 1];

        // Predictor of P(t_{k+1}) given the step-k states.
        let (p_pred, _) = reg.fit(p_next);

        // Diffusion loadings.
        let mut q_residual = 0.0;
        let mut q_step: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(n_vol); n_particles];
        match basis.q_estimator {
            QEstimator::CenteredIncrement => {
                for j in 0..n_vol {
                    let targets: Vec<DVector<f64>> = (0..n_particles)
                        .map(|i| {
                            (&p_next[i] - &p_pred[i]) * (ens.noise().increment(k, i)[j] / dt)
                        })
                        .collect();
                    let (fitted, res) = reg.fit(&targets);
                    q_residual += res;
                    for (i, f) in fitted.into_iter().enumerate() {
                        q_step[i].push(f);
                    }
                }
                q_residual /= n_vol.max(1) as f64;
            }
            QEstimator::JointIncrement => {
                let (fitted_blocks, res) = joint_increment_fit(
                    &reg.phi,
                    basis,
                    ens,
                    k,
                    p_next,
                    n_vol,
                    dt,
                )?;
                q_residual = res;
                for i in 0..n_particles {
                    for fitted in &fitted_blocks {
                        q_step[i].push(fitted[i].clone());
                    }
                }
            }
        }

        // Driver with the regressed P-predictor and same-step Q.
        let driver = driver_at_step(spec, ens, ctrl, grid, k, &p_pred, &q_step, mode);

        // P-regression of the one-step target.
        let targets: Vec<DVector<f64>> = (0..n_particles)
            .map(|i| &p_next[i] + &driver[i] * dt)
            .collect();
        let (p_fit, p_residual) = reg.fit(&targets);

        for (i, pf) in p_fit.iter().enumerate() {
            if !pf.iter().all(|x| x.is_finite()) {
                return Err(Error::BlowUp {
                    step: k,
                    particle: i,
                    magnitude: f64::NAN,
                });
            }
        }
        p[k] = p_fit;
        q[k] = q_step;
        diagnostics.push(RegressionDiagnostics {
            step: k,
            p_residual,
            q_residual,
            condition: reg.condition,
        });
    }
    diagnostics.reverse();

    Ok(AdjointEnsemble { p, q, diagnostics })
}

/// Joint regression of `P_{k+1}` on `[φ, φ ΔW^1, .., φ ΔW^n]`; the block-`j`
/// coefficients evaluated at the features give `Q^j`.
fn joint_increment_fit(
    phi: &DMatrix<f64>,
    basis: &RegressionBasis,
    ens: &PathEnsemble,
    k: usize,
    p_next: &[DVector<f64>],
    n_vol: usize,
    _dt: f64,
) -> Result<(Vec<Vec<DVector<f64>>>, f64)> {
    let n = phi.nrows();
    let b = phi.ncols();
    let cols = b * (1 + n_vol);
    let mut design = DMatrix::zeros(n, cols);
    for i in 0..n {
        for c in 0..b {
            design[(i, c)] = phi[(i, c)];
        }
        let dw = ens.noise().increment(k, i);
        for j in 0..n_vol {
            for c in 0..b {
                design[(i, (1 + j) * b + c)] = phi[(i, c)] * dw[j];
            }
        }
    }
    let mut gram = design.tr_mul(&design);
    let ridge = basis.ridge_scale * n as f64;
    for d in 0..cols {
        gram[(d, d)] += ridge;
    }
    let chol = gram.cholesky().ok_or_else(|| Error::Regression {
        step: k,
        reason: "singular joint normal equations".into(),
    })?;
    let dim = p_next[0].len();
    let mut rhs = DMatrix::zeros(cols, dim);
    for (i, t) in p_next.iter().enumerate() {
        for c in 0..cols {
            for d in 0..dim {
                rhs[(c, d)] += design[(i, c)] * t[d];
            }
        }
    }
    let beta = chol.solve(&rhs);
    let fitted_all = &design * &beta;
    let mut res_sq = 0.0;
    for i in 0..n {
        for d in 0..dim {
            let r = p_next[i][d] - fitted_all[(i, d)];
            res_sq += r * r;
        }
    }
    // Evaluate block-j coefficients at the plain features.
    let mut blocks = Vec::with_capacity(n_vol);
    for j in 0..n_vol {
        let block = beta.rows((1 + j) * b, b).into_owned();
        let fitted = phi * &block;
        blocks.push(
            (0..n)
                .map(|i| DVector::from_fn(dim, |d, _| fitted[(i, d)]))
                .collect::<Vec<_>>(),
        );
    }
    Ok((blocks, (res_sq / n as f64).sqrt()))
}

/// Exact pass-through recursion for zero-volatility ensembles: conditional
/// expectation is the identity, `Q ≡ 0`.
fn solve_adjoint_deterministic(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    ens: &PathEnsemble,
    ctrl: &ControlField,
    mode: DriverMode,
) -> Result<AdjointEnsemble> {
    let n_particles = ens.n_particles();
    let k_steps = grid.steps;
    let dt = grid.dt();
    let mut p = vec![Vec::new(); k_steps + 1];
    let q = vec![vec![Vec::new(); n_particles]; k_steps];
    p[k_steps] = terminal_gradient(spec, ens, mode);
    let no_q: Vec<Vec<DVector<f64>>> = vec![Vec::new(); n_particles];
    for k in (0..k_steps).rev() {
        let driver = driver_at_step(spec, ens, ctrl, grid, k, &p[k + 1], &no_q, mode);
        let row: Vec<DVector<f64>> = (0..n_particles)
            .map(|i| &p[k + 1][i] + &driver[i] * dt)
            .collect();
        for (i, pf) in row.iter().enumerate() {
            if !pf.iter().all(|x| x.is_finite()) {
                return Err(Error::BlowUp {
                    step: k,
                    particle: i,
                    magnitude: f64::NAN,
                });
            }
        }
        p[k] = row;
    }
    Ok(AdjointEnsemble {
        p,
        q,
        diagnostics: Vec::new(),
    })
}

/// Discrete L² norm `sqrt(Σ_k Δ Σ_i w_i |D_v L_i(t_k)|²)` of the control
/// gradient along the trajectory; zero exactly when the sampled optimality
/// condition holds. Uses the duality pairing `(P(t_{k+1}), Q(t_k))`.
pub fn optimality_residual(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    ens: &PathEnsemble,
    ctrl: &ControlField,
    adj: &AdjointEnsemble,
) -> f64 {
    let dt = grid.dt();
    let w = ens.weights();
    let mut total = 0.0;
    for k in 0..grid.steps {
        let mu = ens.measure(k);
        let t = grid.node(k);
        let mut step = 0.0;
        for i in 0..ens.n_particles() {
            let ap = adj.dual_point(k, i);
            let g = grad_v_l(spec, &mu.points()[i], mu, &ctrl.values[k][i], t, &ap);
            step += w[i] * g.norm_squared();
        }
        total += dt * step;
    }
    total.sqrt()
}
