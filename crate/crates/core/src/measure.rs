//! Empirical probability measures on `R^n` and 2-Wasserstein distances.
//!
//! The solver represents every probability measure as a weighted point cloud
//! (an atom per particle). Two identities tie the metric side to the particle
//! ensembles:
//!
//! ```text
//! W2(X # (m ⊗ P), δ_0)              = ||X||_{H_m}
//! W2(X # (m ⊗ P), X' # (m ⊗ P))    <= ||X - X'||_{H_m}
//! ```
//!
//! where `||X||_{H_m} = sqrt(Σ_i w_i |X_i|^2)` is the ensemble norm. Exact
//! optimal transport is only implemented where the solver needs it as a test
//! oracle: the 1-d quantile coupling (optimal for quadratic cost) and an
//! exact assignment solver for small equal-weight clouds.

use crate::error::{Error, Result};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// A weighted point cloud standing in for an element of `P_2(R^n)`.
///
/// Weights are nonnegative and sum to one within `1e-12`. The first moment is
/// cached on construction since mean-coupled coefficients query it per call.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure", into = "RawMeasure")]
pub struct EmpiricalMeasure {
    points: Vec<DVector<f64>>,
    weights: Vec<f64>,
    mean: DVector<f64>,
}

/// Wire form of a measure: one `[weight, coordinates...]`-style record pair.
#[derive(Serialize, Deserialize)]
struct RawMeasure {
    weights: Vec<f64>,
    points: Vec<Vec<f64>>,
}

impl From<EmpiricalMeasure> for RawMeasure {
    fn from(m: EmpiricalMeasure) -> Self {
        RawMeasure {
            weights: m.weights.clone(),
            points: m.points.iter().map(|p| p.iter().copied().collect()).collect(),
        }
    }
}

impl TryFrom<RawMeasure> for EmpiricalMeasure {
    type Error = Error;

    fn try_from(raw: RawMeasure) -> Result<Self> {
        let points = raw
            .points
            .into_iter()
            .map(DVector::from_vec)
            .collect::<Vec<_>>();
        EmpiricalMeasure::new(points, raw.weights)
    }
}

const WEIGHT_SUM_TOL: f64 = 1e-12;

impl EmpiricalMeasure {
    pub fn new(points: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        if points.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "{} atoms but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Dimension(
                "atoms have inconsistent dimensions".into(),
            ));
        }
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidWeights("negative or non-finite weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidWeights(format!(
                "weights sum to {total}, expected 1 within {WEIGHT_SUM_TOL}"
            )));
        }
        let mut mean = DVector::zeros(dim);
        for (p, w) in points.iter().zip(&weights) {
            mean.axpy(*w, p, 1.0);
        }
        Ok(Self {
            points,
            weights,
            mean,
        })
    }

    /// Uniform weights `1/N`.
    pub fn uniform(points: Vec<DVector<f64>>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::EmptyMeasure);
        }
        let w = 1.0 / n as f64;
        Self::new(points, vec![w; n])
    }

    /// The point mass `δ_c` as a single atom.
    pub fn dirac(c: DVector<f64>) -> Self {
        let mean = c.clone();
        Self {
            points: vec![c],
            weights: vec![1.0],
            mean,
        }
    }

    /// `δ_0` in dimension `dim`.
    pub fn dirac_origin(dim: usize) -> Self {
        Self::dirac(DVector::zeros(dim))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Cached first moment `∫ y dm(y)`.
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// `∫ φ dm`, summed in atom order.
    pub fn integrate(&self, mut phi: impl FnMut(&DVector<f64>) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * phi(p))
            .sum()
    }

    /// The mixture `m + ε (m' − m)` realized by concatenating atoms with
    /// scaled weights, so that `∫ φ` of the result equals
    /// `(1−ε) ∫ φ dm + ε ∫ φ dm'`.
    pub fn mix(&self, other: &EmpiricalMeasure, eps: f64) -> Result<EmpiricalMeasure> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension(format!(
                "cannot mix measures of dimension {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        let mut points = Vec::with_capacity(self.len() + other.len());
        let mut weights = Vec::with_capacity(self.len() + other.len());
        for (p, w) in self.points.iter().zip(&self.weights) {
            points.push(p.clone());
            weights.push((1.0 - eps) * w);
        }
        for (p, w) in other.points.iter().zip(&other.weights) {
            points.push(p.clone());
            weights.push(eps * w);
        }
        EmpiricalMeasure::new(points, weights)
    }
}

fn check_same_dim(m: &EmpiricalMeasure, m2: &EmpiricalMeasure) -> Result<()> {
    if m.dim() != m2.dim() {
        return Err(Error::Dimension(format!(
            "measures of dimension {} and {}",
            m.dim(),
            m2.dim()
        )));
    }
    Ok(())
}

/// Exact `W_2` between one-dimensional measures via the quantile (monotone)
/// coupling, which is optimal for quadratic cost. Handles general weights.
pub fn wasserstein2_1d(m: &EmpiricalMeasure, m2: &EmpiricalMeasure) -> Result<f64> {
    check_same_dim(m, m2)?;
    if m.dim() != 1 {
        return Err(Error::Dimension(format!(
            "wasserstein2_1d requires dimension 1, got {}",
            m.dim()
        )));
    }
    let sorted = |meas: &EmpiricalMeasure| -> Vec<(f64, f64)> {
        let mut atoms: Vec<(f64, f64)> = meas
            .points()
            .iter()
            .zip(meas.weights())
            .map(|(p, w)| (p[0], *w))
            .collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        atoms
    };
    let a = sorted(m);
    let b = sorted(m2);

    // Walk both sorted atom lists, transporting the smaller remaining mass.
    let mut cost = 0.0;
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    loop {
        let mass = ra.min(rb);
        let d = a[i].0 - b[j].0;
        cost += mass * d * d;
        ra -= mass;
        rb -= mass;
        if ra <= 0.0 {
            i += 1;
            if i == a.len() {
                break;
            }
            ra = a[i].1;
        }
        if rb <= 0.0 {
            j += 1;
            if j == b.len() {
                break;
            }
            rb = b[j].1;
        }
    }
    Ok(cost.max(0.0).sqrt())
}

/// Number of atoms up to which the assignment is solved by exhaustive
/// permutation search; larger clouds go through the Hungarian algorithm.
const EXHAUSTIVE_ATOMS: usize = 9;

/// Exact `W_2` between two equal-weight clouds with the same atom count, via
/// the optimal assignment. A test oracle: exhaustive permutation search for
/// small clouds, Hungarian algorithm beyond.
pub fn wasserstein2_small_n(m: &EmpiricalMeasure, m2: &EmpiricalMeasure) -> Result<f64> {
    check_same_dim(m, m2)?;
    if m.len() != m2.len() {
        return Err(Error::UnsupportedCoupling(format!(
            "atom counts differ: {} vs {}",
            m.len(),
            m2.len()
        )));
    }
    let n = m.len();
    let w = 1.0 / n as f64;
    let uniform = |meas: &EmpiricalMeasure| meas.weights().iter().all(|x| (x - w).abs() < 1e-12);
    if !uniform(m) || !uniform(m2) {
        return Err(Error::UnsupportedCoupling(
            "exact assignment requires uniform weights".into(),
        ));
    }
    let cost = |i: usize, j: usize| (m.points()[i].clone() - &m2.points()[j]).norm_squared();
    let mut costs = vec![vec![0.0; n]; n];
    for (i, row) in costs.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = cost(i, j);
        }
    }
    let total = if n <= EXHAUSTIVE_ATOMS {
        exhaustive_assignment(&costs)
    } else {
        hungarian_assignment(&costs)
    };
    Ok((w * total).max(0.0).sqrt())
}

/// Minimum assignment cost by iterating over all permutations.
fn exhaustive_assignment(costs: &[Vec<f64>]) -> f64 {
    let n = costs.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm, iterative.
    let mut c = vec![0usize; n];
    let eval = |perm: &[usize]| -> f64 { perm.iter().enumerate().map(|(i, &j)| costs[i][j]).sum() };
    best = best.min(eval(&perm));
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// Minimum assignment cost via the Hungarian algorithm (Jonker-Volgenant
/// style shortest augmenting paths), O(n^3).
fn hungarian_assignment(costs: &[Vec<f64>]) -> f64 {
    let n = costs.len();
    // Potentials and matching; row 0 / column 0 are sentinels.
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut matched = vec![0usize; n + 1]; // matched[j] = row assigned to column j

    for i in 1..=n {
        matched[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = costs[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        // Augment along the path.
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut total = 0.0;
    for j in 1..=n {
        total += costs[matched[j] - 1][j - 1];
    }
    total
}

/// The empirical law of `{X_i}` under the particle weights of `m`; realizes
/// the push-forward of `m ⊗ P` by a per-particle map.
pub fn push_forward(values: &[DVector<f64>], m: &EmpiricalMeasure) -> Result<EmpiricalMeasure> {
    if values.len() != m.len() {
        return Err(Error::Dimension(format!(
            "{} image points for {} atoms",
            values.len(),
            m.len()
        )));
    }
    EmpiricalMeasure::new(values.to_vec(), m.weights().to_vec())
}

/// `||X||_{H_m} = sqrt(Σ_i w_i |X_i|^2)`, summed in atom order.
pub fn ensemble_norm(values: &[DVector<f64>], m: &EmpiricalMeasure) -> Result<f64> {
    if values.len() != m.len() {
        return Err(Error::Dimension(format!(
            "{} values for {} atoms",
            values.len(),
            m.len()
        )));
    }
    let sq: f64 = values
        .iter()
        .zip(m.weights())
        .map(|(x, w)| w * x.norm_squared())
        .sum();
    Ok(sq.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn d1(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    fn cloud_1d(xs: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(xs.iter().map(|&x| d1(x)).collect()).unwrap()
    }

    #[test]
    fn dirac_distance_is_gap() {
        let a = EmpiricalMeasure::dirac(d1(0.0));
        let b = EmpiricalMeasure::dirac(d1(3.0));
        assert_relative_eq!(wasserstein2_1d(&a, &b).unwrap(), 3.0, epsilon = 1e-14);
    }

    #[test]
    fn identity_of_indiscernibles() {
        let m = cloud_1d(&[0.3, -1.2, 2.0]);
        assert_eq!(wasserstein2_1d(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn two_atom_derived_value() {
        // Brute force over both assignments of 2 equal-weight atoms:
        // sorted pairing costs sqrt((1 + 1)/2) = 1, crossed sqrt((9+1)/2).
        let m = cloud_1d(&[0.0, 2.0]);
        let m2 = cloud_1d(&[1.0, 3.0]);
        assert_relative_eq!(wasserstein2_1d(&m, &m2).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(wasserstein2_small_n(&m, &m2).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = EmpiricalMeasure::dirac(d1(0.0));
        let b = EmpiricalMeasure::dirac(DVector::from_vec(vec![0.0, 1.0]));
        assert!(matches!(wasserstein2_1d(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn empty_measure_rejected() {
        assert!(matches!(
            EmpiricalMeasure::uniform(vec![]),
            Err(Error::EmptyMeasure)
        ));
    }

    #[test]
    fn small_n_identical_clouds() {
        let pts: Vec<_> = (0..5)
            .map(|i| DVector::from_vec(vec![i as f64, -(i as f64)]))
            .collect();
        let m = EmpiricalMeasure::uniform(pts).unwrap();
        assert_relative_eq!(wasserstein2_small_n(&m, &m).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn small_n_translation() {
        let mut rng = crate::rng::stream_rng(7, 0);
        let pts: Vec<_> = (0..6)
            .map(|_| crate::rng::normal_vector(&mut rng, 2))
            .collect();
        let shift = DVector::from_vec(vec![1.5, -0.5]);
        let shifted: Vec<_> = pts.iter().map(|p| p + &shift).collect();
        let m = EmpiricalMeasure::uniform(pts).unwrap();
        let m2 = EmpiricalMeasure::uniform(shifted).unwrap();
        assert_relative_eq!(
            wasserstein2_small_n(&m, &m2).unwrap(),
            shift.norm(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn three_atom_2d_matches_exhaustive_minimum() {
        // Frozen instance; expected value computed by the same permutation
        // enumeration the assertion spells out inline.
        let a = vec![
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
        ];
        let b = vec![
            DVector::from_vec(vec![2.0, 0.0]),
            DVector::from_vec(vec![0.0, -1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        ];
        let m = EmpiricalMeasure::uniform(a.clone()).unwrap();
        let m2 = EmpiricalMeasure::uniform(b.clone()).unwrap();

        let mut best = f64::INFINITY;
        for p in [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ] {
            let c: f64 = (0..3).map(|i| (a[i].clone() - &b[p[i]]).norm_squared()).sum();
            best = best.min(c / 3.0);
        }
        assert_relative_eq!(
            wasserstein2_small_n(&m, &m2).unwrap(),
            best.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn hungarian_agrees_with_exhaustive() {
        let mut rng = crate::rng::stream_rng(11, 0);
        for _ in 0..20 {
            let n = rng.random_range(2..=7);
            let costs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.random_range(0.0..10.0)).collect())
                .collect();
            let e = exhaustive_assignment(&costs);
            let h = hungarian_assignment(&costs);
            assert_relative_eq!(e, h, epsilon = 1e-10);
        }
    }

    #[test]
    fn small_n_agrees_with_1d_sort_coupling() {
        let mut rng = crate::rng::stream_rng(13, 0);
        for _ in 0..25 {
            let n = rng.random_range(2..=12);
            let xs: Vec<f64> = (0..n).map(|_| crate::rng::normal(&mut rng)).collect();
            let ys: Vec<f64> = (0..n).map(|_| crate::rng::normal(&mut rng)).collect();
            let m = cloud_1d(&xs);
            let m2 = cloud_1d(&ys);
            let a = wasserstein2_1d(&m, &m2).unwrap();
            let b = wasserstein2_small_n(&m, &m2).unwrap();
            assert!((a - b).abs() <= 1e-10, "sort {a} vs assignment {b}");
        }
    }

    #[test]
    fn push_forward_identities() {
        let m = cloud_1d(&[0.0, 1.0]);
        // Identity map returns m.
        let id = push_forward(m.points(), &m).unwrap();
        assert_eq!(id.points(), m.points());
        // Constant map gives N copies of c.
        let c = d1(4.0);
        let cst = push_forward(&[c.clone(), c.clone()], &m).unwrap();
        assert!(cst.points().iter().all(|p| p == &c));
        // x -> 2x on (δ_0 + δ_1)/2 gives (δ_0 + δ_2)/2.
        let doubled: Vec<_> = m.points().iter().map(|p| p * 2.0).collect();
        let pf = push_forward(&doubled, &m).unwrap();
        assert_eq!(pf.points()[0][0], 0.0);
        assert_eq!(pf.points()[1][0], 2.0);
    }

    #[test]
    fn ensemble_norm_examples() {
        let m = cloud_1d(&[0.0, 0.0]);
        assert_eq!(ensemble_norm(&[d1(0.0), d1(0.0)], &m).unwrap(), 0.0);
        assert_relative_eq!(
            ensemble_norm(&[d1(2.0), d1(2.0)], &m).unwrap(),
            2.0,
            epsilon = 1e-14
        );
        // Hand evaluation sqrt((1 + 9)/2) = sqrt(5).
        assert_relative_eq!(
            ensemble_norm(&[d1(1.0), d1(3.0)], &m).unwrap(),
            5.0_f64.sqrt(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn norm_equals_distance_to_origin_1d() {
        let mut rng = crate::rng::stream_rng(17, 0);
        for _ in 0..50 {
            let n = rng.random_range(1..=20);
            let vals: Vec<_> = (0..n).map(|_| d1(crate::rng::normal(&mut rng))).collect();
            let m = EmpiricalMeasure::uniform(vals.clone()).unwrap();
            let pf = push_forward(&vals, &m).unwrap();
            let w = wasserstein2_1d(&pf, &EmpiricalMeasure::dirac_origin(1)).unwrap();
            let nn = ensemble_norm(&vals, &m).unwrap();
            assert!((w - nn).abs() <= 1e-10);
        }
    }

    #[test]
    fn contraction_inequality_1d() {
        let mut rng = crate::rng::stream_rng(19, 0);
        for _ in 0..50 {
            let n = rng.random_range(1..=20);
            let xs: Vec<_> = (0..n).map(|_| d1(crate::rng::normal(&mut rng))).collect();
            let ys: Vec<_> = (0..n).map(|_| d1(crate::rng::normal(&mut rng))).collect();
            let m = EmpiricalMeasure::uniform(xs.clone()).unwrap();
            let pf_x = push_forward(&xs, &m).unwrap();
            let pf_y = push_forward(&ys, &m).unwrap();
            let w = wasserstein2_1d(&pf_x, &pf_y).unwrap();
            let diffs: Vec<_> = xs.iter().zip(&ys).map(|(a, b)| a - b).collect();
            let nn = ensemble_norm(&diffs, &m).unwrap();
            assert!(w <= nn + 1e-10, "W2 {w} exceeds ensemble norm {nn}");
        }
    }

    #[test]
    fn metric_axioms_sampled() {
        let mut rng = crate::rng::stream_rng(23, 0);
        for _ in 0..30 {
            let n = rng.random_range(1..=10);
            let gen = |rng: &mut rand_chacha::ChaCha12Rng| {
                cloud_1d(&(0..n).map(|_| crate::rng::normal(rng)).collect::<Vec<_>>())
            };
            let a = gen(&mut rng);
            let b = gen(&mut rng);
            let c = gen(&mut rng);
            let dab = wasserstein2_1d(&a, &b).unwrap();
            let dba = wasserstein2_1d(&b, &a).unwrap();
            assert_eq!(dab, dba, "symmetry must hold exactly");
            assert_eq!(wasserstein2_1d(&a, &a).unwrap(), 0.0);
            let dac = wasserstein2_1d(&a, &c).unwrap();
            let dcb = wasserstein2_1d(&c, &b).unwrap();
            assert!(dab <= dac + dcb + 1e-10);
        }
    }

    #[test]
    fn mixture_is_linear_in_integrals() {
        let mut rng = crate::rng::stream_rng(29, 0);
        for _ in 0..20 {
            let m = cloud_1d(&(0..6).map(|_| crate::rng::normal(&mut rng)).collect::<Vec<_>>());
            let m2 = cloud_1d(&(0..4).map(|_| crate::rng::normal(&mut rng)).collect::<Vec<_>>());
            let eps = 1e-3;
            let mixed = m.mix(&m2, eps).unwrap();
            let phi = |p: &DVector<f64>| (p[0] * 1.3).cos() + p[0] * p[0];
            let lhs = mixed.integrate(phi);
            let rhs = (1.0 - eps) * m.integrate(phi) + eps * m2.integrate(phi);
            assert_relative_eq!(lhs, rhs, epsilon = 1e-13, max_relative = 1e-12);
        }
    }
}
