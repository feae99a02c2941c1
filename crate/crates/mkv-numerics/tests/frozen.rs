use std::f64::consts::PI;
use std::sync::Arc;

use mkv_numerics::frozen::{
    frozen_density, frozen_density_dx, frozen_density_dx2, frozen_moments, frozen_mu_moment_derivative, majorant,
    FrozenCoefficient, FrozenParams, GaussianMajorant,
};
use mkv_numerics::measure::ScalarFlow;
use mkv_numerics::model::{builtin_problem, CoefficientSet, REGISTRY};
use mkv_numerics::Error;
use proptest::prelude::*;

fn constant_set(b: f64, sigma: f64) -> CoefficientSet {
    let profile = builtin_problem("gaussian", 1).unwrap().profile().clone();
    CoefficientSet::new(
        "constant",
        1,
        Arc::new(move |_, _, _, out| out[0] = b),
        Arc::new(move |_, _, _, out| out[0] = sigma),
        Arc::new(|x: &[f64]| x[0]),
        Arc::new(|x: &[f64]| x[0]),
        profile,
    )
    .unwrap()
}

fn grid_flow(n: usize, end: f64, w: impl Fn(f64) -> f64) -> ScalarFlow {
    let times: Vec<f64> = (0..=n).map(|k| end * k as f64 / n as f64).collect();
    let w1: Vec<f64> = times.iter().map(|&r| w(r)).collect();
    ScalarFlow::new(times, w1.clone(), w1).unwrap()
}

fn params(m: f64, a: f64) -> FrozenParams {
    FrozenParams { m: vec![m], a: vec![a], s_prime: 0.0, s: 1.0 }
}

/// Composite Simpson with n (even) panels.
fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let inner: f64 = (1..n).map(|i| if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h)).sum();
    h / 3.0 * (f(lo) + inner + f(hi))
}

#[test]
fn constant_coefficients_integrate_linearly() {
    let c = constant_set(0.7, 1.2);
    let flow = grid_flow(10, 1.0, |_| 0.0);
    let p = frozen_moments(&c, &flow, &[0.3], 0.15, 0.85).unwrap();
    assert!((p.m[0] - 0.7 * 0.7).abs() < 1e-15);
    assert!((p.a[0] - 1.44 * 0.7).abs() < 1e-15);
}

#[test]
fn linear_flow_mean_is_one_half() {
    // b = w with w1(r) = r: trapezoid is exact
    let c = builtin_problem("mean-attract", 1).unwrap();
    let flow = grid_flow(7, 1.0, |r| r);
    let p = frozen_moments(&c, &flow, &[2.0], 0.0, 1.0).unwrap();
    assert!((p.m[0] - 0.5).abs() < 1e-15);
}

#[test]
fn interval_errors() {
    let c = builtin_problem("gaussian", 1).unwrap();
    let flow = grid_flow(4, 1.0, |_| 0.0);
    assert!(matches!(frozen_moments(&c, &flow, &[0.0], 0.5, 0.5), Err(Error::TimeOrder { .. })));
    assert!(matches!(frozen_moments(&c, &flow, &[0.0], 0.5, 1.5), Err(Error::Coverage { .. })));
}

#[test]
fn density_examples() {
    let p = params(0.0, 1.0);
    assert!((frozen_density(&p, &[0.4], &[0.4]).unwrap() - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
    let q = params(0.3, 0.2);
    let total = simpson(|y| frozen_density(&q, &[0.1], &[y]).unwrap(), 0.4 - 12.0 * 0.2f64.sqrt(), 0.4 + 12.0 * 0.2f64.sqrt(), 4000);
    assert!((total - 1.0).abs() < 1e-8);
    let mode = frozen_density(&q, &[0.1], &[0.4]).unwrap();
    for dy in [-1e-3, 1e-3, 0.1, -0.3] {
        assert!(frozen_density(&q, &[0.1], &[0.4 + dy]).unwrap() < mode);
    }
}

#[test]
fn non_spd_covariance_is_rejected() {
    assert!(matches!(frozen_density(&params(0.0, -1.0), &[0.0], &[0.0]), Err(Error::NotPositiveDefinite)));
}

#[test]
fn derivatives_at_the_mode() {
    let q = params(0.5, 0.2);
    assert_eq!(frozen_density_dx(&q, 0.25, 0.75).unwrap(), 0.0);
    let p = frozen_density(&q, &[0.25], &[0.75]).unwrap();
    assert!((frozen_density_dx2(&q, 0.25, 0.75).unwrap() + p / 0.2).abs() < 1e-14);
}

#[test]
fn derivatives_need_scalar_parameters() {
    let p = FrozenParams { m: vec![0.0, 0.0], a: vec![1.0, 0.0, 0.0, 1.0], s_prime: 0.0, s: 1.0 };
    assert!(matches!(frozen_density_dx(&p, 0.0, 0.0), Err(Error::Unsupported(_))));
}

#[test]
fn derivatives_match_finite_differences_in_the_backward_variable() {
    let mut s = mkv_numerics::rng::NoiseStream::new(17, 0, 60);
    let mut z = vec![0.0; 60];
    s.standard_normals(0, &mut z);
    for i in 0..20 {
        let (m, a) = (0.5 * z[3 * i], 0.2 + z[3 * i + 1].abs());
        let q = params(m, a);
        let y = 1.0;
        // |y - y' - m| <= 4 sqrt(a)
        let yp = y - m - z[3 * i + 2].clamp(-4.0, 4.0) * a.sqrt();
        let h = 1e-4 * a.sqrt();
        let f = |v: f64| frozen_density(&q, &[v], &[y]).unwrap();
        let d1 = (f(yp + h) - f(yp - h)) / (2.0 * h);
        let d2 = (f(yp + h) - 2.0 * f(yp) + f(yp - h)) / (h * h);
        let e1 = frozen_density_dx(&q, yp, y).unwrap();
        let e2 = frozen_density_dx2(&q, yp, y).unwrap();
        let scale = f(yp) / a;
        assert!((d1 - e1).abs() <= 1e-6 * e1.abs().max(scale), "{d1} vs {e1}");
        assert!((d2 - e2).abs() <= 1e-6 * e2.abs().max(scale), "{d2} vs {e2}");
    }
}

#[test]
fn majorant_examples() {
    let k = GaussianMajorant::new(1.0).unwrap();
    assert_eq!(majorant(&k, 0.0, &[0.3], 1.0, &[0.3]), 1.0);
    let a = majorant(&k, 0.0, &[0.0], 0.25, &[0.0]);
    let b = majorant(&k, 0.0, &[0.0], 1.0, &[0.0]);
    assert!((a / b - 2.0).abs() < 1e-15);
    assert!(GaussianMajorant::new(0.0).is_err());
}

#[test]
fn gaussian_frozen_density_is_dominated_with_unit_constant() {
    let c = builtin_problem("gaussian", 1).unwrap();
    let lambda = c.profile().lambda;
    let k = GaussianMajorant::new(1.0 / (2.0 * lambda)).unwrap();
    let flow = grid_flow(50, 1.0, |_| 0.0);
    for i in 1..=100 {
        let s = i as f64 / 100.0;
        let p = frozen_moments(&c, &flow, &[0.0], 0.0, s).unwrap();
        for j in 0..100 {
            let y = -4.0 + 8.0 * j as f64 / 99.0;
            let v = frozen_density(&p, &[0.0], &[y]).unwrap();
            assert!(v <= majorant(&k, 0.0, &[0.0], s, &[y]), "s={s} y={y}");
        }
    }
}

#[test]
fn registry_densities_normalize_and_are_dominated() {
    let flow = grid_flow(40, 1.0, |r| 0.3 - 0.2 * r);
    for name in REGISTRY {
        let c = builtin_problem(name, 1).unwrap();
        let lambda = c.profile().lambda;
        let k = GaussianMajorant::new(1.0 / (4.0 * lambda)).unwrap();
        for &xi in &[-1.3, 0.0, 0.7] {
            for &(sp, s) in &[(0.0, 0.05), (0.2, 0.7), (0.0, 1.0)] {
                let p = frozen_moments(&c, &flow, &[xi], sp, s).unwrap();
                let (m, a) = p.scalar().unwrap();
                let tau: f64 = s - sp;
                assert!(a >= tau / lambda * (1.0 - 1e-12) && a <= lambda * tau * (1.0 + 1e-12));
                let sd = a.sqrt();
                let total = simpson(|y| frozen_density(&p, &[0.2], &[y]).unwrap(), 0.2 + m - 12.0 * sd, 0.2 + m + 12.0 * sd, 4000);
                assert!((total - 1.0).abs() < 1e-8, "{name}: {total}");
                let worst = (0..200)
                    .map(|j| 0.2 - 5.0 * tau.sqrt() + 10.0 * tau.sqrt() * j as f64 / 199.0)
                    .map(|y| frozen_density(&p, &[0.2], &[y]).unwrap() / majorant(&k, sp, &[0.2], s, &[y]))
                    .fold(0.0, f64::max);
                assert!(worst <= 10.0, "{name}: {worst}");
            }
        }
    }
}

#[test]
fn measure_derivative_of_frozen_mean() {
    let ma = builtin_problem("mean-attract", 1).unwrap();
    let g = builtin_problem("gaussian", 1).unwrap();
    let flow = grid_flow(20, 1.0, |_| 0.4);
    let kappa = vec![0.75; 21];
    let zero = frozen_mu_moment_derivative(&g, &flow, &kappa, FrozenCoefficient::Drift, 0.1, 0.2, 0.9).unwrap();
    assert_eq!(zero, 0.0);
    let v = frozen_mu_moment_derivative(&ma, &flow, &kappa, FrozenCoefficient::Drift, 0.1, 0.2, 0.9).unwrap();
    assert!((v - 0.75 * 0.7).abs() < 1e-14);
    assert!(matches!(
        frozen_mu_moment_derivative(&ma, &flow, &kappa[1..], FrozenCoefficient::Drift, 0.1, 0.2, 0.9),
        Err(Error::GridMismatch { .. })
    ));
}

#[test]
fn power_law_flow_derivative_integrates_to_the_closed_form() {
    // D(r) = r^{-1/4} with d_w b = 1 on [0, s]: (4/3) s^{3/4}
    let ma = builtin_problem("mean-attract", 1).unwrap();
    let n = 400;
    let times: Vec<f64> = (0..=n).map(|k| (k as f64 / n as f64).powi(4)).collect();
    let flow = ScalarFlow::constant(times.clone(), 0.0, 0.0).unwrap();
    let d: Vec<f64> = times.iter().map(|r| r.powf(-0.25)).collect();
    for s in [0.25, 1.0] {
        let v = frozen_mu_moment_derivative(&ma, &flow, &d, FrozenCoefficient::Drift, 0.0, 0.0, s).unwrap();
        let exact = 4.0 / 3.0 * f64::powf(s, 0.75);
        assert!((v - exact).abs() < 1e-4 * exact, "{v} vs {exact}");
    }
}

proptest! {
    #[test]
    fn frozen_covariance_respects_ellipticity(idx in 0usize..4, xi in -3.0f64..3.0, sp in 0.0f64..0.5, len in 0.01f64..0.5) {
        let c = builtin_problem(REGISTRY[idx], 1).unwrap();
        let flow = grid_flow(30, 1.0, |r| (3.0 * r).sin());
        let p = frozen_moments(&c, &flow, &[xi], sp, sp + len).unwrap();
        let lambda = c.profile().lambda;
        prop_assert!(p.a[0] >= len / lambda * (1.0 - 1e-12) && p.a[0] <= lambda * len * (1.0 + 1e-12));
    }

    #[test]
    fn density_is_symmetric_about_the_mode(m in -2.0f64..2.0, a in 0.01f64..4.0, d in 0.0f64..3.0) {
        let q = params(m, a);
        let l = frozen_density(&q, &[0.0], &[m - d]).unwrap();
        let r = frozen_density(&q, &[0.0], &[m + d]).unwrap();
        prop_assert!((l - r).abs() <= 1e-12 * l.max(1e-300));
    }
}
