use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use hybridcub::cubature::{
    compose_spherical_radial, genz_spherical, make_rule, mysovskikh_spherical, radial_moment_match, rule_to_csv,
    stability_factor, stroud_5th, ukf_sigma_set, CubatureRule, RuleKind,
};

fn supported(kind: RuleKind, n: usize) -> bool {
    !(kind == RuleKind::CnfVI && n > 7)
}

fn kinds() -> impl Strategy<Value = RuleKind> {
    prop::sample::select(RuleKind::ALL.to_vec())
}

/// `sum w f(point)` for a scalar function of the point.
fn integrate(rule: &CubatureRule, f: impl Fn(&DVector<f64>) -> f64) -> f64 {
    (0..rule.len())
        .map(|i| rule.weights[i] * f(&rule.points.row(i).transpose()))
        .sum()
}

proptest! {
    #[test]
    fn weights_sum_to_one_and_moments_are_standard(kind in kinds(), n in 2usize..=8) {
        prop_assume!(supported(kind, n));
        let r = make_rule(kind, n).unwrap();
        prop_assert!((r.weights.sum() - 1.0).abs() < 1e-12);
        let mean = r.points.transpose() * &r.weights;
        prop_assert!(mean.amax() < 1e-12);
        let mut cov = DMatrix::zeros(n, n);
        for i in 0..r.len() {
            let p = r.points.row(i).transpose();
            cov += &p * p.transpose() * r.weights[i];
        }
        prop_assert!((cov - DMatrix::identity(n, n)).amax() < 1e-11);
    }

    #[test]
    fn point_set_is_symmetric_under_negation(kind in kinds(), n in 2usize..=8) {
        prop_assume!(supported(kind, n));
        let r = make_rule(kind, n).unwrap();
        for i in 0..r.len() {
            let p = r.points.row(i);
            let found = (0..r.len()).any(|j| {
                (r.points.row(j) + p).amax() < 1e-12 && (r.weights[j] - r.weights[i]).abs() < 1e-14
            });
            prop_assert!(found, "{kind} n={n}: no mirror for point {i}");
        }
    }

    #[test]
    fn stability_factor_is_one_iff_weights_nonnegative(kind in kinds(), n in 2usize..=8) {
        prop_assume!(supported(kind, n));
        let r = make_rule(kind, n).unwrap();
        let sf = stability_factor(&r);
        prop_assert!(sf >= 1.0 - 1e-12);
        prop_assert_eq!(r.weights.min() >= 0.0, (sf - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_forms_are_exact(kind in kinds(), n in 2usize..=8, seed in any::<u64>()) {
        prop_assume!(supported(kind, n));
        let r = make_rule(kind, n).unwrap();
        let a = DMatrix::from_fn(n, n, |i, j| (((seed >> ((i * n + j) % 60)) & 0xff) as f64 / 64.0) - 2.0);
        let got = integrate(&r, |x| (x.transpose() * &a * x)[0]);
        prop_assert!((got - a.trace()).abs() <= 1e-10 * a.amax().max(1.0) * n as f64);
    }

    #[test]
    fn fifth_degree_rules_integrate_quartic_projections(
        kind in prop::sample::select(vec![RuleKind::CnfII, RuleKind::CnfIV, RuleKind::CnfVI]),
        n in 2usize..=7,
        dir in prop::collection::vec(-1.0f64..1.0, 7),
    ) {
        let r = make_rule(kind, n).unwrap();
        let a = DVector::from_column_slice(&dir[..n]);
        let s2 = a.norm_squared();
        // (a.x) ~ N(0, |a|^2), so its fourth moment is 3|a|^4
        let got = integrate(&r, |x| a.dot(x).powi(4));
        prop_assert!((got - 3.0 * s2 * s2).abs() <= 1e-10 * (1.0 + s2 * s2));
    }

    #[test]
    fn construction_is_deterministic(kind in kinds(), n in 2usize..=8) {
        prop_assume!(supported(kind, n));
        let a = make_rule(kind, n).unwrap();
        let b = make_rule(kind, n).unwrap();
        prop_assert_eq!(rule_to_csv(&a), rule_to_csv(&b));
    }
}

#[test]
fn cnf_one_is_the_scaled_axis_set() {
    let r = make_rule(RuleKind::CnfI, 7).unwrap();
    assert_eq!(r.len(), 14);
    for i in 0..14 {
        assert_relative_eq!(r.weights[i], 1.0 / 14.0, epsilon = 1e-15);
        assert_relative_eq!(r.points.row(i).norm(), 7f64.sqrt(), epsilon = 1e-12);
        assert_eq!(r.points.row(i).iter().filter(|v| v.abs() > 1e-12).count(), 1);
    }
}

#[test]
fn cnf_five_weights() {
    let r = make_rule(RuleKind::CnfV, 7).unwrap();
    assert_eq!(r.degree, 3);
    let center: Vec<usize> = (0..r.len()).filter(|&i| r.points.row(i).norm() < 1e-12).collect();
    assert_eq!(center.len(), 1);
    assert_relative_eq!(r.weights[center[0]], 2.0 / 9.0, epsilon = 1e-13);
    for i in (0..r.len()).filter(|i| *i != center[0]) {
        assert_relative_eq!(r.weights[i], 7.0 / 144.0, epsilon = 1e-13);
    }
}

#[test]
fn radial_rules_match_gaussian_moments() {
    let r = radial_moment_match(1, 3).unwrap();
    assert_relative_eq!(r.radii[0], 0.5f64.sqrt(), epsilon = 1e-14);
    assert_relative_eq!(r.weights[0], std::f64::consts::PI.sqrt() / 2.0, epsilon = 1e-14);
    let r = radial_moment_match(7, 3).unwrap();
    assert_relative_eq!(r.radii[0], 3.5f64.sqrt(), epsilon = 1e-14);
    let r = radial_moment_match(7, 5).unwrap();
    let mut radii: Vec<f64> = r.radii.iter().map(|v| v * 2f64.sqrt()).collect();
    radii.sort_by(f64::total_cmp);
    assert!(radii[0].abs() < 1e-14);
    assert_relative_eq!(radii[1], 3.0, epsilon = 1e-12);
}

#[test]
fn point_count_formulas() {
    for n in 2..=8usize {
        let count = |k| make_rule(k, n).unwrap().len();
        assert_eq!(count(RuleKind::CnfI), 2 * n);
        assert_eq!(count(RuleKind::CnfII), 2 * n * n + 1);
        assert_eq!(count(RuleKind::CnfIII), 2 * n + 2);
        assert_eq!(count(RuleKind::CnfIV), n * n + 3 * n + 3);
        assert_eq!(count(RuleKind::Ukf), 2 * n + 1);
        if n <= 7 {
            assert_eq!(count(RuleKind::CnfVI), n * n + n + 2);
        }
    }
}

#[test]
fn mysovskikh_triangle_in_the_plane() {
    let s = mysovskikh_spherical(2, 3).unwrap();
    assert_eq!(s.len(), 6);
    for i in 0..6 {
        assert_relative_eq!(s.points.row(i).norm(), 1.0, epsilon = 1e-14);
    }
    assert!(mysovskikh_spherical(3, 7).is_err());
    assert!(genz_spherical(3, 4).is_err());
}

#[test]
fn composition_rejects_dimension_mismatch() {
    let s = genz_spherical(3, 3).unwrap();
    let r = radial_moment_match(3, 3).unwrap();
    assert!(compose_spherical_radial(&s, &r, 4, RuleKind::CnfI).is_err());
}

#[test]
fn stroud_is_positive_and_bounded_in_dimension() {
    for n in 2..=7 {
        let r = stroud_5th(n).unwrap();
        assert!(r.weights.min() > 0.0);
        assert_eq!(stability_factor(&r), 1.0);
    }
    assert!(stroud_5th(1).is_err());
    assert!(stroud_5th(8).is_err());
}

#[test]
fn ukf_one_dimensional_set() {
    let r = ukf_sigma_set(1, 2.0).unwrap();
    let mut pts: Vec<(f64, f64)> = (0..3).map(|i| (r.points[(i, 0)], r.weights[i])).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert_relative_eq!(pts[0].0, -3f64.sqrt(), epsilon = 1e-14);
    assert_relative_eq!(pts[1].1, 2.0 / 3.0, epsilon = 1e-14);
    assert_relative_eq!(pts[2].1, 1.0 / 6.0, epsilon = 1e-14);
    assert_relative_eq!(integrate(&r, |x| x[0].powi(4)), 3.0, epsilon = 1e-13);
    assert!(ukf_sigma_set(3, -3.0).is_err());
}

#[test]
fn rule_csv_layout() {
    let csv = rule_to_csv(&make_rule(RuleKind::CnfI, 2).unwrap());
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "w,x1,x2");
    assert_eq!(lines.len(), 5);
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first[0], "2.5000000000000000e-1");
}
