//! Property-based invariants over randomized inputs.

use mfc_core::forward::{ControlField, TimeGrid};
use mfc_core::measure::{
    ensemble_norm, push_forward, wasserstein2_1d, wasserstein2_small_n, EmpiricalMeasure,
};
use mfc_core::nalgebra::DVector;
use proptest::collection::vec;
use proptest::prelude::*;

fn cloud(xs: &[f64]) -> EmpiricalMeasure {
    EmpiricalMeasure::uniform(xs.iter().map(|&x| DVector::from_vec(vec![x])).collect()).unwrap()
}

fn coord() -> impl Strategy<Value = f64> {
    -10.0..10.0f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w2_symmetry_and_identity(xs in vec(coord(), 1..12), ys in vec(coord(), 1..12)) {
        let a = cloud(&xs);
        let b = cloud(&ys);
        let dab = wasserstein2_1d(&a, &b).unwrap();
        let dba = wasserstein2_1d(&b, &a).unwrap();
        prop_assert_eq!(dab, dba);
        prop_assert_eq!(wasserstein2_1d(&a, &a).unwrap(), 0.0);
        prop_assert!(dab >= 0.0);
    }

    #[test]
    fn w2_triangle_inequality(
        xs in vec(coord(), 1..10),
        ys in vec(coord(), 1..10),
        zs in vec(coord(), 1..10),
    ) {
        let (a, b, c) = (cloud(&xs), cloud(&ys), cloud(&zs));
        let dab = wasserstein2_1d(&a, &b).unwrap();
        let dac = wasserstein2_1d(&a, &c).unwrap();
        let dcb = wasserstein2_1d(&c, &b).unwrap();
        prop_assert!(dab <= dac + dcb + 1e-10);
    }

    #[test]
    fn push_forward_norm_identity(xs in vec(coord(), 1..16)) {
        let points: Vec<DVector<f64>> =
            xs.iter().map(|&x| DVector::from_vec(vec![x])).collect();
        let m = EmpiricalMeasure::uniform(points.clone()).unwrap();
        let law = push_forward(&points, &m).unwrap();
        let w = wasserstein2_1d(&law, &EmpiricalMeasure::dirac_origin(1)).unwrap();
        let n = ensemble_norm(&points, &m).unwrap();
        prop_assert!((w - n).abs() <= 1e-10);
    }

    #[test]
    fn assignment_matches_sort_coupling(xs in vec(coord(), 2..9), ys in vec(coord(), 2..9)) {
        prop_assume!(xs.len() == ys.len());
        let a = cloud(&xs);
        let b = cloud(&ys);
        let sort = wasserstein2_1d(&a, &b).unwrap();
        let assign = wasserstein2_small_n(&a, &b).unwrap();
        prop_assert!((sort - assign).abs() <= 1e-10);
    }

    #[test]
    fn mixture_integral_linearity(
        xs in vec(coord(), 1..10),
        ys in vec(coord(), 1..10),
        eps in 1e-6..0.5f64,
    ) {
        let a = cloud(&xs);
        let b = cloud(&ys);
        let mixed = a.mix(&b, eps).unwrap();
        let phi = |p: &DVector<f64>| (0.7 * p[0]).cos() + 0.3 * p[0] * p[0];
        let lhs = mixed.integrate(phi);
        let rhs = (1.0 - eps) * a.integrate(phi) + eps * b.integrate(phi);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
    }

    #[test]
    fn control_field_blend_endpoints(
        a_vals in vec(coord(), 8),
        b_vals in vec(coord(), 8),
    ) {
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let a = ControlField::from_fn(&grid, 2, |k, i| {
            DVector::from_vec(vec![a_vals[k * 2 + i]])
        });
        let b = ControlField::from_fn(&grid, 2, |k, i| {
            DVector::from_vec(vec![b_vals[k * 2 + i]])
        });
        prop_assert_eq!(a.blend(&b, 0.0).values, a.values.clone());
        prop_assert_eq!(a.blend(&b, 1.0).values, b.values.clone());
        // Norm of the difference is symmetric in the arguments.
        let w = vec![0.5, 0.5];
        let dab = a.add_scaled(&b, -1.0).norm_l2_sq(&grid, &w);
        let dba = b.add_scaled(&a, -1.0).norm_l2_sq(&grid, &w);
        prop_assert!((dab - dba).abs() <= 1e-12 * (1.0 + dab.abs()));
    }
}
