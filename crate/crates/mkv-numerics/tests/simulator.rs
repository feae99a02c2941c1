use std::sync::Arc;

use mkv_numerics::measure::{EmpiricalMeasure, ScalarFlow};
use mkv_numerics::model::{builtin_problem, CoefficientSet};
use mkv_numerics::simulator::{
    euler_maruyama, picard_iterate, picard_windows, picard_with, simulate_mkv, PicardOptions, SimulationConfig,
};
use mkv_numerics::Error;
use proptest::prelude::*;

fn constant_coefficients(b: f64, sigma: f64) -> CoefficientSet {
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

fn normal_sample(n: usize, mean: f64, sd: f64, seed: u64) -> EmpiricalMeasure {
    let mut s = mkv_numerics::rng::NoiseStream::new(seed, 0, n);
    let mut z = vec![0.0; n];
    s.standard_normals(0, &mut z);
    EmpiricalMeasure::from_scalars(z.into_iter().map(|v| mean + sd * v).collect()).unwrap()
}

fn flat_flow(cfg: &SimulationConfig) -> ScalarFlow {
    ScalarFlow::constant(cfg.times(), 0.0, 0.0).unwrap()
}

#[test]
fn no_dynamics_keeps_paths_constant() {
    let c = constant_coefficients(0.0, 0.0);
    let cfg = SimulationConfig::new(0.0, 1.0, 50, 4, 1, 1);
    let mu = EmpiricalMeasure::from_scalars(vec![0.1, -2.0, 3.0, 0.0]).unwrap();
    let p = euler_maruyama(&c, &flat_flow(&cfg), &mu, &cfg, None).unwrap();
    for i in 0..4 {
        for k in 0..=50 {
            assert_eq!(p.point(i, k), mu.particle(i));
        }
    }
}

#[test]
fn unit_drift_moves_by_elapsed_time() {
    let c = constant_coefficients(1.0, 0.0);
    let cfg = SimulationConfig::new(0.25, 1.0, 30, 2, 1, 1);
    let mu = EmpiricalMeasure::from_scalars(vec![0.5, -1.0]).unwrap();
    let p = euler_maruyama(&c, &flat_flow(&cfg), &mu, &cfg, None).unwrap();
    for i in 0..2 {
        assert!((p.point(i, 30)[0] - mu.particle(i)[0] - 0.75).abs() < 1e-14);
    }
}

#[test]
fn brownian_increments_have_elapsed_variance() {
    let c = constant_coefficients(0.0, 1.0);
    let n = 10_000;
    let cfg = SimulationConfig::new(0.0, 0.8, 16, n, 3, 1);
    let mu = EmpiricalMeasure::from_scalars(vec![0.0; n]).unwrap();
    let p = euler_maruyama(&c, &flat_flow(&cfg), &mu, &cfg, None).unwrap();
    let v: Vec<f64> = (0..n).map(|i| p.point(i, 16)[0]).collect();
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    // stderr of a normal sample variance: sigma^2 sqrt(2/(n-1))
    let se = 0.8 * (2.0 / (n - 1) as f64).sqrt();
    assert!((var - 0.8).abs() <= 3.0 * se, "{var}");
}

#[test]
fn flow_must_cover_the_horizon() {
    let c = constant_coefficients(0.0, 1.0);
    let cfg = SimulationConfig::new(0.0, 1.0, 10, 1, 0, 1);
    let short = ScalarFlow::constant(vec![0.0, 0.5], 0.0, 0.0).unwrap();
    let mu = EmpiricalMeasure::from_scalars(vec![0.0]).unwrap();
    assert!(matches!(euler_maruyama(&c, &short, &mu, &cfg, None), Err(Error::Coverage { .. })));
}

#[test]
fn law_independent_increments_vanish_after_the_first() {
    let c = builtin_problem("gaussian", 1).unwrap();
    let mu = normal_sample(200, 0.0, 1.0, 1);
    let cfg = SimulationConfig::new(0.0, 0.5, 20, 200, 8, 1);
    let opts = PicardOptions { min_iterations: 4, ..PicardOptions::default() };
    let (r, _) = picard_with(&c, &mu, &cfg, &opts).unwrap();
    assert!(r.increments[0] > 0.0);
    assert!(r.increments[1..].iter().all(|&d| d == 0.0), "{:?}", r.increments);
    assert!(r.converged);
}

#[test]
fn mean_attract_mean_follows_the_discrete_recursion() {
    let c = builtin_problem("mean-attract", 1).unwrap();
    let n = 10_000;
    let mu = normal_sample(n, 1.0, 0.5, 2);
    let m0 = mu.as_slice().iter().sum::<f64>() / n as f64;
    let cfg = SimulationConfig::new(0.0, 0.5, 50, n, 42, 1);
    let sol = simulate_mkv(&c, &mu, &cfg, 1e-10, 40).unwrap();
    let h = cfg.step();
    let tol = 3.0 / (n as f64).sqrt();
    let mut m = m0;
    for k in 0..=50 {
        let (w1, _) = sol.flow.at(cfg.time(k));
        assert!((w1 - m).abs() <= tol, "k={k}: {w1} vs {m}");
        assert!((w1 - m0 * cfg.time(k).exp()).abs() <= tol);
        m *= 1.0 + h;
    }
}

#[test]
fn holder_drift_increments_decrease_to_tolerance() {
    let c = builtin_problem("holder-drift", 1).unwrap();
    let n = 10_000;
    let mu = normal_sample(n, 0.5, 0.5, 3);
    let cfg = SimulationConfig::new(0.0, 0.25, 25, n, 42, 1);
    let r = picard_iterate(&c, &mu, &cfg, 1e-8, 25).unwrap();
    assert!(r.converged, "{:?}", r.increments);
    for m in 2..r.increments.len() {
        assert!(r.increments[m] < r.increments[m - 1], "{:?}", r.increments);
    }
    assert!(r.increments.iter().map(|d| d.sqrt()).sum::<f64>().is_finite());
}

#[test]
fn gaussian_flow_is_the_initial_moments() {
    let c = builtin_problem("gaussian", 1).unwrap();
    let mu = normal_sample(100, 0.3, 1.0, 4);
    let cfg = SimulationConfig::new(0.0, 0.5, 10, 100, 1, 1);
    let sol = simulate_mkv(&c, &mu, &cfg, 1e-8, 25).unwrap();
    // the registry clips phi far outside the sample range, so w1 is the mean
    let m0 = mu.as_slice().iter().sum::<f64>() / 100.0;
    let w0 = sol.flow.w1()[0];
    assert!((w0 - m0).abs() < 1e-14);
    // driftless paths: the mean only moves by the noise average, sd sqrt(r/N)
    for (r, w) in sol.flow.times().iter().zip(sol.flow.w1()) {
        assert!((w - m0).abs() <= 4.0 * (r / 100.0).sqrt() + 1e-14);
    }
}

#[test]
fn different_initial_guesses_reach_the_same_flow() {
    let c = builtin_problem("holder-drift", 1).unwrap();
    let mu = normal_sample(500, 0.5, 0.5, 5);
    let cfg = SimulationConfig::new(0.0, 0.5, 40, 500, 6, 1);
    let tol = 1e-10;
    let a = picard_with(&c, &mu, &cfg, &PicardOptions { tol, ..PicardOptions::default() }).unwrap().0;
    let times = cfg.times();
    let ramp: Vec<f64> = times.iter().map(|t| 2.0 * t - 0.3).collect();
    let guess = ScalarFlow::new(times, ramp.clone(), ramp).unwrap();
    let opts = PicardOptions { tol, initial_flow: Some(guess), ..PicardOptions::default() };
    let b = picard_with(&c, &mu, &cfg, &opts).unwrap().0;
    assert!(a.converged && b.converged);
    let gap = a.final_flow.w1().iter().zip(b.final_flow.w1()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(gap <= 10.0 * tol, "{gap}");
}

#[test]
fn non_convergence_is_reported_not_raised() {
    let c = builtin_problem("holder-drift", 1).unwrap();
    let mu = normal_sample(50, 0.5, 0.5, 7);
    let cfg = SimulationConfig::new(0.0, 0.5, 10, 50, 1, 1);
    let r = picard_iterate(&c, &mu, &cfg, 1e-30, 2).unwrap();
    assert!(!r.converged && r.iterations() == 2);
    assert!(matches!(simulate_mkv(&c, &mu, &cfg, 1e-30, 2), Err(Error::NotConverged(_))));
}

#[test]
fn windows_cover_long_horizons() {
    let c = builtin_problem("mean-attract", 1).unwrap();
    let mu = normal_sample(300, 1.0, 0.5, 8);
    let cfg = SimulationConfig::new(0.0, 1.2, 60, 300, 2, 1);
    let sol = picard_windows(&c, &mu, &cfg, &PicardOptions::default(), 0.5).unwrap();
    assert_eq!(sol.reports.len(), 3);
    assert_eq!(sol.paths.times().len(), 61);
    assert!(sol.reports.iter().all(|r| r.converged));
}

#[test]
fn picard_csv_has_fixed_header() {
    let c = builtin_problem("gaussian", 1).unwrap();
    let mu = normal_sample(10, 0.0, 1.0, 9);
    let r = picard_iterate(&c, &mu, &SimulationConfig::new(0.0, 0.5, 5, 10, 1, 1), 1e-8, 25).unwrap();
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("m,delta_m,w2_gap\n"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn identical_configs_give_identical_paths(seed in 0u64..1000, n in 1usize..20) {
        let c = builtin_problem("holder-drift", 1).unwrap();
        let mu = normal_sample(n, 0.0, 1.0, seed);
        let cfg = SimulationConfig::new(0.0, 0.3, 12, n, seed, 1);
        let a = simulate_mkv(&c, &mu, &cfg, 1e-8, 25).unwrap();
        let b = simulate_mkv(&c, &mu, &cfg, 1e-8, 25).unwrap();
        let bits = |p: &mkv_numerics::simulator::PathEnsemble| {
            (0..n).flat_map(|i| (0..=12).map(move |k| (i, k))).map(|(i, k)| p.point(i, k)[0].to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(bits(&a.paths), bits(&b.paths));
    }

    #[test]
    fn bounded_phi_keeps_the_flow_bounded(seed in 0u64..1000) {
        let c = builtin_problem("holder-diffusion", 1).unwrap();
        let mu = normal_sample(30, 0.0, 3.0, seed);
        let cfg = SimulationConfig::new(0.0, 0.5, 10, 30, seed, 1);
        let r = picard_iterate(&c, &mu, &cfg, 1e-8, 25).unwrap();
        prop_assert!(r.final_flow.w1().iter().all(|w| w.abs() <= 1.0));
        prop_assert!(r.increments.iter().all(|d| *d >= 0.0));
        if r.converged {
            prop_assert!(*r.increments.last().unwrap() <= 1e-8);
        }
    }
}
