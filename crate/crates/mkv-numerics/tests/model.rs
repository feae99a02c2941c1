use std::sync::Arc;

use mkv_numerics::model::{builtin_problem, validate_assumptions, CoefficientSet, RegularityProfile, REGISTRY};
use mkv_numerics::Error;
use proptest::prelude::*;

#[test]
fn unknown_name_is_a_registry_error() {
    assert!(matches!(builtin_problem("heat", 1), Err(Error::UnknownProblem(_))));
}

#[test]
fn gaussian_profile_has_no_drift_and_near_unit_ellipticity() {
    let c = builtin_problem("gaussian", 2).unwrap();
    let p = c.profile();
    assert_eq!(p.c_b, 0.0);
    assert!(p.lambda > 1.0 && p.lambda - 1.0 < 1e-6);
    let mut b = [9.0; 2];
    c.drift(0.3, &[1.0, -2.0], 4.0, &mut b);
    assert_eq!(b, [0.0, 0.0]);
}

#[test]
fn mean_attract_drift_is_the_first_axis_times_w() {
    let c = builtin_problem("mean-attract", 3).unwrap();
    let mut b = [0.0; 3];
    c.drift(0.0, &[0.2, 0.4, -1.0], 1.0, &mut b);
    assert_eq!(b, [1.0, 0.0, 0.0]);
    assert_eq!(c.phi1(&[1.5, 7.0, 7.0]), 1.5);
}

#[test]
fn holder_drift_phi1_quotient_stays_bounded_near_zero() {
    let c = builtin_problem("holder-drift", 1).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let h = 10f64.powf(-8.0 + 8.0 * i as f64 / 199.0);
        let q = (c.phi1(&[h]) - c.phi1(&[0.0])).abs() / h.sqrt();
        worst = worst.max(q);
        for j in 0..20 {
            let x = -2.0 + 0.2 * j as f64;
            let q = (c.phi1(&[x + h]) - c.phi1(&[x])).abs() / h.sqrt();
            worst = worst.max(q);
        }
    }
    assert!(worst <= 1.0 + 1e-12, "quotient {worst}");
    assert!(worst > 0.99);
}

#[test]
fn gaussian_ellipticity_is_exactly_one() {
    let c = builtin_problem("gaussian", 1).unwrap();
    let r = validate_assumptions(&c, 1000, 3).unwrap();
    assert_eq!(r.ellipticity, (1.0, 1.0));
    assert!(r.pass);
}

#[test]
fn holder_diffusion_rayleigh_quotients_lie_in_one_to_three_halves() {
    let c = builtin_problem("holder-diffusion", 1).unwrap();
    let r = validate_assumptions(&c, 10_000, 11).unwrap();
    assert!(r.ellipticity.0 >= 1.0 && r.ellipticity.1 <= 1.5, "{:?}", r.ellipticity);
    assert!(r.pass);
}

#[test]
fn every_registry_problem_passes_its_profile() {
    for name in REGISTRY {
        let c = builtin_problem(name, 1).unwrap();
        for seed in [1, 2] {
            let r = validate_assumptions(&c, 10_000, seed).unwrap();
            assert!(r.pass, "{name}: {:?}", r.checks);
        }
    }
}

#[test]
fn unbounded_drift_fails_the_sup_check() {
    let base = builtin_problem("gaussian", 1).unwrap();
    let profile = RegularityProfile { c_b: 10.0, ..base.profile().clone() };
    let c = CoefficientSet::new(
        "linear",
        1,
        Arc::new(|_, x, _, out| out[0] = x[0]),
        Arc::new(|_, _, _, out| out[0] = 1.0),
        Arc::new(|x: &[f64]| x[0].tanh()),
        Arc::new(|x: &[f64]| x[0].tanh()),
        profile,
    )
    .unwrap();
    let r = validate_assumptions(&c, 1000, 5).unwrap();
    assert!(!r.pass);
    let sup = r.checks.iter().find(|c| c.name == "sup |b|").unwrap();
    assert!(!sup.pass && sup.measured > 10.0);
}

#[test]
fn too_few_samples_are_rejected() {
    let c = builtin_problem("gaussian", 1).unwrap();
    assert!(matches!(validate_assumptions(&c, 99, 0), Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn ellipticity_holds_pointwise(idx in 0usize..4, x in -50.0f64..50.0, w in -5.0f64..5.0, t in 0.0f64..1.0) {
        let c = builtin_problem(REGISTRY[idx], 1).unwrap();
        let lambda = c.profile().lambda;
        let a = c.a1(t, x, w);
        prop_assert!(a >= 1.0 / lambda && a <= lambda);
    }

    #[test]
    fn coefficients_are_finite(idx in 0usize..4, x in -1e8f64..1e8, w in -1e8f64..1e8) {
        let c = builtin_problem(REGISTRY[idx], 1).unwrap();
        prop_assert!(c.b1(0.0, x, w).is_finite() && c.sigma1(0.0, x, w).is_finite());
        prop_assert!(c.phi1(&[x]).is_finite() && c.phi2(&[x]).is_finite());
    }
}
