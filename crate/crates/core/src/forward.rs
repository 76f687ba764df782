//! Forward simulation of the controlled McKean-Vlasov particle system.
//!
//! Explicit Euler-Maruyama with left-endpoint coefficients and the empirical
//! measure frozen at the step start:
//!
//! ```text
//! X_i(t_{k+1}) = X_i(t_k) + f(X_i, μ_k, v_i, t_k) Δ
//!              + Σ_j σ^j(X_i, μ_k, v_i, t_k) ΔW^j_i(t_k),
//! ```
//!
//! where `μ_k` is the empirical law of the ensemble at `t_k`. The running
//! cost uses the matching left-endpoint quadrature. Noise (initial states and
//! Brownian increments) is drawn once into a [`NoiseBundle`] and shared by
//! reference across simulations, so that perturbing the control under common
//! random numbers changes states only.

use crate::coefficients::ProblemSpec;
use crate::error::{Error, Result};
use crate::measure::{ensemble_norm, EmpiricalMeasure};
use crate::rng::{self, stream_rng};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Particle positions beyond this magnitude abort the simulation.
const BLOW_UP_GUARD: f64 = 1e8;

/// Uniform time grid `t_k = t0 + k Δ`, `Δ = (T - t0)/K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("time grid needs at least one step".into()));
        }
        if t_end <= t0 {
            return Err(Error::Config(format!(
                "time grid end {t_end} must exceed start {t0}"
            )));
        }
        Ok(Self { t0, t_end, steps })
    }

    pub fn for_problem(spec: &ProblemSpec, steps: usize) -> Result<Self> {
        Self::new(spec.t0, spec.horizon, steps)
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt()
    }
}

/// Initial states and Brownian increments for one ensemble, drawn once from
/// the `(seed, stream)` derivation and reused across control perturbations.
pub struct NoiseBundle {
    pub seed: u64,
    initial: Vec<DVector<f64>>,
    weights: Vec<f64>,
    /// `increments[k][i] ∈ R^n`, distributed N(0, Δ I); all zero for
    /// deterministic problems.
    increments: Vec<Vec<DVector<f64>>>,
}

impl NoiseBundle {
    pub fn n_particles(&self) -> usize {
        self.initial.len()
    }

    pub fn initial(&self) -> &[DVector<f64>] {
        &self.initial
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn increment(&self, k: usize, i: usize) -> &DVector<f64> {
        &self.increments[k][i]
    }

    pub fn is_zero_noise(&self) -> bool {
        self.increments
            .iter()
            .all(|row| row.iter().all(|dw| dw.amax() == 0.0))
    }
}

/// Draw initial states (stream `INITIAL_STATES`) and increments (stream
/// `INCREMENTS`) for `n_particles` particles on `grid`. Deterministic
/// problems get zero increments.
pub fn draw_noise(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    n_particles: usize,
    seed: u64,
) -> NoiseBundle {
    let mut init_rng = stream_rng(seed, rng::stream::INITIAL_STATES);
    let initial: Vec<DVector<f64>> = (0..n_particles)
        .map(|_| (spec.initial_sampler)(&mut init_rng))
        .collect();
    let weights = vec![1.0 / n_particles as f64; n_particles];
    let n = spec.state_dim;
    let sqrt_dt = grid.dt().sqrt();
    let increments = if spec.is_deterministic() {
        vec![vec![DVector::zeros(n); n_particles]; grid.steps]
    } else {
        let mut incr_rng = stream_rng(seed, rng::stream::INCREMENTS);
        (0..grid.steps)
            .map(|_| {
                (0..n_particles)
                    .map(|_| rng::normal_vector(&mut incr_rng, n) * sqrt_dt)
                    .collect()
            })
            .collect()
    };
    NoiseBundle {
        seed,
        initial,
        weights,
        increments,
    }
}

/// Per-particle, per-step control values on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    /// `values[k][i] ∈ R^d` for `k = 0..K-1`.
    pub values: Vec<Vec<DVector<f64>>>,
    /// Set when the field was produced by a feedback closure.
    pub feedback_tag: Option<String>,
}

impl ControlField {
    pub fn zeros(grid: &TimeGrid, n_particles: usize, control_dim: usize) -> Self {
        Self {
            values: vec![vec![DVector::zeros(control_dim); n_particles]; grid.steps],
            feedback_tag: None,
        }
    }

    pub fn from_fn(
        grid: &TimeGrid,
        n_particles: usize,
        mut f: impl FnMut(usize, usize) -> DVector<f64>,
    ) -> Self {
        Self {
            values: (0..grid.steps)
                .map(|k| (0..n_particles).map(|i| f(k, i)).collect())
                .collect(),
            feedback_tag: None,
        }
    }

    pub fn steps(&self) -> usize {
        self.values.len()
    }

    pub fn n_particles(&self) -> usize {
        self.values.first().map_or(0, |row| row.len())
    }

    /// `self + alpha * other`, entrywise.
    pub fn add_scaled(&self, other: &ControlField, alpha: f64) -> ControlField {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y * alpha).collect())
            .collect();
        ControlField {
            values,
            feedback_tag: None,
        }
    }

    /// Convex combination `(1 - theta) self + theta other`.
    pub fn blend(&self, other: &ControlField, theta: f64) -> ControlField {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| x * (1.0 - theta) + y * theta)
                    .collect()
            })
            .collect();
        ControlField {
            values,
            feedback_tag: None,
        }
    }

    /// Squared discrete L² norm `Σ_k Δ Σ_i w_i |v_i(t_k)|²`.
    pub fn norm_l2_sq(&self, grid: &TimeGrid, weights: &[f64]) -> f64 {
        let dt = grid.dt();
        self.values
            .iter()
            .map(|row| {
                dt * row
                    .iter()
                    .zip(weights)
                    .map(|(v, w)| w * v.norm_squared())
                    .sum::<f64>()
            })
            .sum()
    }

    /// Discrete L² inner product against another field.
    pub fn inner_l2(&self, other: &ControlField, grid: &TimeGrid, weights: &[f64]) -> f64 {
        let dt = grid.dt();
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                dt * a
                    .iter()
                    .zip(b)
                    .zip(weights)
                    .map(|((x, y), w)| w * x.dot(y))
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Simulated particle trajectories. The per-step empirical measures own the
/// states; the noise bundle is shared by reference for common-random-number
/// reuse.
pub struct PathEnsemble {
    measures: Vec<EmpiricalMeasure>,
    noise: Arc<NoiseBundle>,
}

impl PathEnsemble {
    pub fn n_particles(&self) -> usize {
        self.noise.n_particles()
    }

    /// Number of steps `K`; states exist at `K + 1` nodes.
    pub fn steps(&self) -> usize {
        self.measures.len() - 1
    }

    pub fn measure(&self, k: usize) -> &EmpiricalMeasure {
        &self.measures[k]
    }

    pub fn states(&self, k: usize) -> &[DVector<f64>] {
        self.measures[k].points()
    }

    pub fn state(&self, k: usize, i: usize) -> &DVector<f64> {
        &self.measures[k].points()[i]
    }

    pub fn weights(&self) -> &[f64] {
        self.noise.weights()
    }

    pub fn noise(&self) -> &Arc<NoiseBundle> {
        &self.noise
    }

    pub fn seed(&self) -> u64 {
        self.noise.seed
    }
}

fn check_shapes(spec: &ProblemSpec, grid: &TimeGrid, ctrl: &ControlField, noise: &NoiseBundle) -> Result<()> {
    if ctrl.steps() != grid.steps {
        return Err(Error::Dimension(format!(
            "control has {} steps, grid has {}",
            ctrl.steps(),
            grid.steps
        )));
    }
    if ctrl.n_particles() != noise.n_particles() {
        return Err(Error::Dimension(format!(
            "control for {} particles, noise for {}",
            ctrl.n_particles(),
            noise.n_particles()
        )));
    }
    if let Some(x0) = noise.initial.first() {
        if x0.len() != spec.state_dim {
            return Err(Error::Dimension(format!(
                "initial states have dimension {}, problem has {}",
                x0.len(),
                spec.state_dim
            )));
        }
    }
    Ok(())
}

/// Euler-Maruyama simulation under the given control and noise realization.
/// Deterministic given the noise bundle.
pub fn simulate_forward(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    ctrl: &ControlField,
    noise: &Arc<NoiseBundle>,
) -> Result<PathEnsemble> {
    check_shapes(spec, grid, ctrl, noise)?;
    let n_particles = noise.n_particles();
    let weights = noise.weights().to_vec();
    let dt = grid.dt();
    let n_vol = spec.volatility.n_columns();

    let mut measures = Vec::with_capacity(grid.steps + 1);
    measures.push(EmpiricalMeasure::new(noise.initial.clone(), weights.clone())?);

    for k in 0..grid.steps {
        let t = grid.node(k);
        let mu = &measures[k];
        let mut next = Vec::with_capacity(n_particles);
        for i in 0..n_particles {
            let x = &mu.points()[i];
            let v = &ctrl.values[k][i];
            let mut xn = x + (spec.drift)(x, mu, v, t) * dt;
            if n_vol > 0 {
                let dw = noise.increment(k, i);
                for j in 0..n_vol {
                    xn.axpy(dw[j], &spec.vol(j, x, mu, v, t), 1.0);
                }
            }
            let mag = xn.amax();
            if !mag.is_finite() || mag > BLOW_UP_GUARD {
                return Err(Error::BlowUp {
                    step: k + 1,
                    particle: i,
                    magnitude: mag,
                });
            }
            next.push(xn);
        }
        measures.push(EmpiricalMeasure::new(next, weights.clone())?);
    }

    Ok(PathEnsemble {
        measures,
        noise: Arc::clone(noise),
    })
}

/// Zero-volatility mode: each particle is the characteristic from its initial
/// state. Rejects problems with nonzero volatility.
pub fn simulate_deterministic(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    ctrl: &ControlField,
    noise: &Arc<NoiseBundle>,
) -> Result<PathEnsemble> {
    if !spec.is_deterministic() {
        return Err(Error::Mode(
            "simulate_deterministic requires zero volatility".into(),
        ));
    }
    simulate_forward(spec, grid, ctrl, noise)
}

/// Simulate with a feedback law `v = φ(x, μ, t)`, recording the realized
/// open-loop control field.
pub fn simulate_with_feedback(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    noise: &Arc<NoiseBundle>,
    feedback: impl Fn(&DVector<f64>, &EmpiricalMeasure, f64) -> DVector<f64>,
) -> Result<(PathEnsemble, ControlField)> {
    let n_particles = noise.n_particles();
    let weights = noise.weights().to_vec();
    let dt = grid.dt();
    let n_vol = spec.volatility.n_columns();

    let mut measures = Vec::with_capacity(grid.steps + 1);
    measures.push(EmpiricalMeasure::new(noise.initial.clone(), weights.clone())?);
    let mut ctrl_rows = Vec::with_capacity(grid.steps);

    for k in 0..grid.steps {
        let t = grid.node(k);
        let mu = &measures[k];
        let mut next = Vec::with_capacity(n_particles);
        let mut row = Vec::with_capacity(n_particles);
        for i in 0..n_particles {
            let x = &mu.points()[i];
            let v = feedback(x, mu, t);
            let mut xn = x + (spec.drift)(x, mu, &v, t) * dt;
            if n_vol > 0 {
                let dw = noise.increment(k, i);
                for j in 0..n_vol {
                    xn.axpy(dw[j], &spec.vol(j, x, mu, &v, t), 1.0);
                }
            }
            let mag = xn.amax();
            if !mag.is_finite() || mag > BLOW_UP_GUARD {
                return Err(Error::BlowUp {
                    step: k + 1,
                    particle: i,
                    magnitude: mag,
                });
            }
            next.push(xn);
            row.push(v);
        }
        measures.push(EmpiricalMeasure::new(next, weights.clone())?);
        ctrl_rows.push(row);
    }

    Ok((
        PathEnsemble {
            measures,
            noise: Arc::clone(noise),
        },
        ControlField {
            values: ctrl_rows,
            feedback_tag: Some("feedback".into()),
        },
    ))
}

/// Left-endpoint quadrature of the loss:
/// `J ≈ Σ_k Δ Σ_i w_i g(X_i, μ_k, v_i, t_k) + Σ_i w_i g_T(X_i(T), μ_K)`.
pub fn evaluate_cost(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    ens: &PathEnsemble,
    ctrl: &ControlField,
) -> Result<f64> {
    let dt = grid.dt();
    let w = ens.weights();
    let mut total = 0.0;
    for k in 0..grid.steps {
        let t = grid.node(k);
        let mu = ens.measure(k);
        let mut step_cost = 0.0;
        for i in 0..ens.n_particles() {
            step_cost += w[i] * (spec.running_cost)(&mu.points()[i], mu, &ctrl.values[k][i], t);
        }
        if !step_cost.is_finite() {
            return Err(Error::Evaluation { step: k });
        }
        total += dt * step_cost;
    }
    let mu_t = ens.measure(grid.steps);
    let mut terminal = 0.0;
    for i in 0..ens.n_particles() {
        terminal += w[i] * (spec.terminal_cost)(&mu_t.points()[i], mu_t);
    }
    if !terminal.is_finite() {
        return Err(Error::Evaluation { step: grid.steps });
    }
    Ok(total + terminal)
}

/// Per-step ensemble norms for blow-up and growth monitoring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentReport {
    pub norms: Vec<f64>,
    pub max_norm: f64,
    pub argmax_step: usize,
}

pub fn moment_diagnostics(ens: &PathEnsemble) -> MomentReport {
    let norms: Vec<f64> = (0..=ens.steps())
        .map(|k| {
            let mu = ens.measure(k);
            ensemble_norm(mu.points(), mu).expect("consistent ensemble")
        })
        .collect();
    let (argmax_step, max_norm) = norms
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(ai, am), (i, &x)| {
            if x > am {
                (i, x)
            } else {
                (ai, am)
            }
        });
    MomentReport {
        norms,
        max_norm,
        argmax_step,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{ProblemSpec, Volatility};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn d1(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    /// 1-d builder with drift closure and optional unit volatility.
    fn spec_with(
        drift: impl Fn(&DVector<f64>, &EmpiricalMeasure, &DVector<f64>, f64) -> DVector<f64>
            + Send
            + Sync
            + 'static,
        stochastic: bool,
    ) -> ProblemSpec {
        let b = ProblemSpec::builder(1, 1, 0.0, 1.0)
            .drift(drift)
            .drift_dx(|_x, _m, _v, _s| DMatrix::zeros(1, 1))
            .drift_dv(|_x, _m, _v, _s| DMatrix::zeros(1, 1))
            .running_cost(|_x, _m, _v, _s| 0.0)
            .running_dx(|_x, _m, _v, _s| d1(0.0))
            .running_dv(|_x, _m, _v, _s| d1(0.0))
            .terminal_cost(|_x, _m| 0.0)
            .terminal_dx(|_x, _m| d1(0.0))
            .initial_sampler(|rng| d1(crate::rng::normal(rng)));
        let b = if stochastic {
            b.volatility(Volatility::Columns {
                columns: vec![Box::new(|_x, _m, _v, _s| d1(1.0))],
                dx: vec![Box::new(|_x, _m, _v, _s| DMatrix::zeros(1, 1))],
                dv: vec![Box::new(|_x, _m, _v, _s| DMatrix::zeros(1, 1))],
                dnu: vec![crate::coefficients::MatrixKernel::Zero],
                flat: vec![None],
            })
        } else {
            b
        };
        b.build().unwrap()
    }

    #[test]
    fn zero_dynamics_holds_states() {
        let spec = spec_with(|_x, _m, _v, _s| d1(0.0), false);
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let noise = Arc::new(draw_noise(&spec, &grid, 16, 1));
        let ctrl = ControlField::zeros(&grid, 16, 1);
        let ens = simulate_deterministic(&spec, &grid, &ctrl, &noise).unwrap();
        for k in 0..=10 {
            assert_eq!(ens.states(k), ens.states(0));
        }
    }

    #[test]
    fn constant_drift_is_exact() {
        let spec = spec_with(|_x, _m, _v, _s| d1(1.0), false);
        let grid = TimeGrid::new(0.0, 1.0, 7).unwrap();
        let noise = Arc::new(draw_noise(&spec, &grid, 8, 2));
        let ctrl = ControlField::zeros(&grid, 8, 1);
        let ens = simulate_forward(&spec, &grid, &ctrl, &noise).unwrap();
        for i in 0..8 {
            assert_relative_eq!(
                ens.state(7, i)[0],
                ens.state(0, i)[0] + 1.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn brownian_variance_matches_horizon() {
        let spec = spec_with(|_x, _m, _v, _s| d1(0.0), true);
        let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let n = 10_000;
        let noise = Arc::new(draw_noise(&spec, &grid, n, 3));
        let ctrl = ControlField::zeros(&grid, n, 1);
        let ens = simulate_forward(&spec, &grid, &ctrl, &noise).unwrap();
        let diffs: Vec<f64> = (0..n)
            .map(|i| ens.state(20, i)[0] - ens.state(0, i)[0])
            .collect();
        let mean = diffs.iter().sum::<f64>() / n as f64;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
        // Weak sanity: the ensemble mean moves by O(N^{-1/2}).
        assert!(mean.abs() < 3.0 / (n as f64).sqrt() * 2.0, "mean {mean}");
    }

    #[test]
    fn determinism_bitwise() {
        let spec = spec_with(|x, _m, v, _s| d1(-0.5 * x[0] + v[0]), true);
        let grid = TimeGrid::new(0.0, 1.0, 25).unwrap();
        let mk = || {
            let noise = Arc::new(draw_noise(&spec, &grid, 64, 42));
            let ctrl = ControlField::from_fn(&grid, 64, |k, i| d1((k as f64 * 0.01) - i as f64 * 0.001));
            simulate_forward(&spec, &grid, &ctrl, &noise).unwrap()
        };
        let a = mk();
        let b = mk();
        for k in 0..=25 {
            for i in 0..64 {
                assert_eq!(a.state(k, i)[0].to_bits(), b.state(k, i)[0].to_bits());
            }
        }
    }

    #[test]
    fn crn_keeps_noise_fixed_and_causality_holds() {
        let spec = spec_with(|x, _m, v, _s| d1(-x[0] + v[0]), true);
        let grid = TimeGrid::new(0.0, 1.0, 16).unwrap();
        let noise = Arc::new(draw_noise(&spec, &grid, 32, 5));
        let ctrl_a = ControlField::zeros(&grid, 32, 1);
        // Perturb the control only after step 8.
        let ctrl_b = ControlField::from_fn(&grid, 16 * 2, |k, _i| {
            if k >= 8 {
                d1(1.0)
            } else {
                d1(0.0)
            }
        });
        let ens_a = simulate_forward(&spec, &grid, &ctrl_a, &noise).unwrap();
        let ens_b = simulate_forward(&spec, &grid, &ctrl_b, &noise).unwrap();
        // Same noise object, different states after the perturbation point.
        assert!(Arc::ptr_eq(ens_a.noise(), ens_b.noise()));
        for k in 0..=8 {
            for i in 0..32 {
                assert_eq!(ens_a.state(k, i)[0].to_bits(), ens_b.state(k, i)[0].to_bits());
            }
        }
        assert!((0..32).any(|i| ens_a.state(16, i)[0] != ens_b.state(16, i)[0]));
    }

    #[test]
    fn exponential_decay_error_halves_with_dt() {
        let spec = spec_with(|x, _m, _v, _s| d1(-x[0]), false);
        let err_for = |steps: usize| {
            let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
            let noise = Arc::new(draw_noise(&spec, &grid, 16, 7));
            let ctrl = ControlField::zeros(&grid, 16, 1);
            let ens = simulate_deterministic(&spec, &grid, &ctrl, &noise).unwrap();
            (0..16)
                .map(|i| (ens.state(steps, i)[0] - ens.state(0, i)[0] * (-1.0f64).exp()).abs())
                .fold(0.0, f64::max)
        };
        let e1 = err_for(64);
        let e2 = err_for(128);
        let ratio = e1 / e2;
        assert!((1.7..2.3).contains(&ratio), "Richardson ratio {ratio}");
    }

    #[test]
    fn mean_coupled_drift_grows_mean_exponentially() {
        let spec = spec_with(|_x, m, _v, _s| m.mean().clone(), false);
        let grid = TimeGrid::new(0.0, 1.0, 400).unwrap();
        let noise = Arc::new(draw_noise(&spec, &grid, 64, 9));
        let ctrl = ControlField::zeros(&grid, 64, 1);
        let ens = simulate_deterministic(&spec, &grid, &ctrl, &noise).unwrap();
        let m0 = ens.measure(0).mean()[0];
        let mt = ens.measure(400).mean()[0];
        assert_relative_eq!(mt, m0 * 1.0f64.exp(), max_relative = 5e-3);
    }

    #[test]
    fn unit_running_cost_integrates_to_horizon() {
        let mut spec = spec_with(|_x, _m, _v, _s| d1(0.0), false);
        spec.running_cost = Box::new(|_x, _m, _v, _s| 1.0);
        let grid = TimeGrid::new(0.0, 1.0, 13).unwrap();
        let noise = Arc::new(draw_noise(&spec, &grid, 8, 11));
        let ctrl = ControlField::zeros(&grid, 8, 1);
        let ens = simulate_forward(&spec, &grid, &ctrl, &noise).unwrap();
        assert_relative_eq!(
            evaluate_cost(&spec, &grid, &ens, &ctrl).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn linear_terminal_cost_of_drifted_state() {
        let mut spec = spec_with(|_x, _m, _v, _s| d1(1.0), false);
        spec.terminal_cost = Box::new(|x, _m| x[0]);
        spec.initial_sampler = Box::new(|_rng| d1(0.0));
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let noise = Arc::new(draw_noise(&spec, &grid, 4, 13));
        let ctrl = ControlField::zeros(&grid, 4, 1);
        let ens = simulate_forward(&spec, &grid, &ctrl, &noise).unwrap();
        assert_relative_eq!(
            evaluate_cost(&spec, &grid, &ens, &ctrl).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn deterministic_mode_rejects_nonzero_volatility() {
        let spec = spec_with(|_x, _m, _v, _s| d1(0.0), true);
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let noise = Arc::new(draw_noise(&spec, &grid, 4, 17));
        let ctrl = ControlField::zeros(&grid, 4, 1);
        assert!(matches!(
            simulate_deterministic(&spec, &grid, &ctrl, &noise),
            Err(Error::Mode(_))
        ));
    }

    #[test]
    fn blow_up_reports_step() {
        let spec = spec_with(|x, _m, _v, _s| d1(x[0] * 1e9), false);
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let noise = Arc::new(draw_noise(&spec, &grid, 4, 19));
        let ctrl = ControlField::zeros(&grid, 4, 1);
        match simulate_forward(&spec, &grid, &ctrl, &noise) {
            Err(Error::BlowUp { step, .. }) => assert_eq!(step, 1),
            Err(other) => panic!("expected blow-up, got {other:?}"),
            Ok(_) => panic!("expected blow-up, simulation succeeded"),
        }
    }

    #[test]
    fn moment_diagnostics_constant_for_static_ensemble() {
        let spec = spec_with(|_x, _m, _v, _s| d1(0.0), false);
        let grid = TimeGrid::new(0.0, 1.0, 6).unwrap();
        let noise = Arc::new(draw_noise(&spec, &grid, 32, 23));
        let ctrl = ControlField::zeros(&grid, 32, 1);
        let ens = simulate_forward(&spec, &grid, &ctrl, &noise).unwrap();
        let report = moment_diagnostics(&ens);
        for w in report.norms.windows(2) {
            assert_relative_eq!(w[0], w[1], epsilon = 1e-12);
        }
    }
}
