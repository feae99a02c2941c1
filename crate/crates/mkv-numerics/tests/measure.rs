use mkv_numerics::measure::{
    lions_derivative_flow, lions_derivative_linear, moment, wasserstein2_1d, EmpiricalMeasure, LionsOptions, ScalarFlow,
    SimulationOracle,
};
use mkv_numerics::model::builtin_problem;
use mkv_numerics::simulator::SimulationConfig;
use mkv_numerics::Error;
use proptest::prelude::*;

fn scalars(v: &[f64]) -> EmpiricalMeasure {
    EmpiricalMeasure::from_scalars(v.to_vec()).unwrap()
}

#[test]
fn moments_of_small_measures() {
    assert_eq!(moment(&EmpiricalMeasure::dirac(&[0.0]).unwrap(), |x| x[0] * x[0]).unwrap(), 0.0);
    assert_eq!(moment(&scalars(&[1.0, 3.0]), |x| x[0]).unwrap(), 2.0);
    assert!((moment(&scalars(&[0.0, 1.0, 2.0]), |x| x[0] * x[0]).unwrap() - 5.0 / 3.0).abs() < 1e-15);
}

#[test]
fn non_finite_moment_names_the_particle() {
    let r = moment(&scalars(&[1.0, 0.0, 2.0]), |x| 1.0 / x[0]);
    assert!(matches!(r, Err(Error::NonFinite { index: 1 })));
}

#[test]
fn second_moment_is_exposed() {
    assert!((scalars(&[1.0, -3.0]).second_moment() - 5.0).abs() < 1e-15);
}

#[test]
fn wasserstein_examples() {
    let mu = scalars(&[0.3, -1.0, 2.0]);
    assert_eq!(wasserstein2_1d(&mu, &mu).unwrap(), 0.0);
    assert_eq!(wasserstein2_1d(&scalars(&[0.0]), &scalars(&[1.0])).unwrap(), 1.0);
    // couplings of {0,2} and {1,3}: sorted gives 1, crossed gives sqrt(5)
    assert_eq!(wasserstein2_1d(&scalars(&[0.0, 2.0]), &scalars(&[3.0, 1.0])).unwrap(), 1.0);
}

#[test]
fn wasserstein_rejects_bad_inputs() {
    let two_d = EmpiricalMeasure::new(2, vec![0.0, 1.0]).unwrap();
    assert!(matches!(wasserstein2_1d(&two_d, &two_d), Err(Error::Unsupported(_))));
    assert!(matches!(wasserstein2_1d(&scalars(&[0.0]), &scalars(&[0.0, 1.0])), Err(Error::Unsupported(_))));
}

#[test]
fn linear_lions_derivatives() {
    assert!((lions_derivative_linear(|x| x[0] * x[0], &[3.0])[0] - 6.0).abs() < 1e-8);
    assert_eq!(lions_derivative_linear(|_| 2.5, &[1.0])[0], 0.0);
    let sqrt_clip = |x: &[f64]| x[0].abs().min(10.0).sqrt();
    assert!((lions_derivative_linear(sqrt_clip, &[1.0])[0] - 0.5).abs() < 1e-8);
}

#[test]
fn empirical_measure_csv_header() {
    let mu = EmpiricalMeasure::new(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let mut buf = Vec::new();
    mu.write_csv(&mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("x0,x1\n"));
}

fn oracle(n: usize, steps: usize, seed: u64) -> SimulationOracle {
    SimulationOracle { config: SimulationConfig::new(0.0, 0.5, steps, n, seed, 1), tol: 1e-10, m_max: 25 }
}

#[test]
fn flow_derivative_at_start_is_the_gradient() {
    let mu = scalars(&[0.7, -0.2, 1.4]);
    let opts = LionsOptions::default();
    let phi = |x: &[f64]| x[0].sin();
    for name in ["gaussian", "holder-drift"] {
        let c = builtin_problem(name, 1).unwrap();
        let e = lions_derivative_flow(&oracle(3, 10, 1), &c, &mu, 0, 0, 0.0, &phi, &opts).unwrap();
        let g = lions_derivative_linear(phi, &[0.7])[0];
        assert!((e.value - g).abs() <= 10.0 * opts.epsilon, "{name}: {} vs {g}", e.value);
    }
}

#[test]
fn gaussian_identity_derivative_is_one() {
    let c = builtin_problem("gaussian", 1).unwrap();
    let mu = scalars(&[0.7, -0.2, 1.4, 0.0]);
    let e = lions_derivative_flow(&oracle(4, 20, 9), &c, &mu, 2, 0, 0.5, &|x| x[0], &LionsOptions::default()).unwrap();
    assert!((e.value - 1.0).abs() < 1e-8, "{}", e.value);
}

#[test]
fn gaussian_square_derivative_is_twice_the_point() {
    // v_s = <x^2, mu> + (s - t), lifted derivative 2z
    let c = builtin_problem("gaussian", 1).unwrap();
    let mu = scalars(&[2.0, -1.0, 0.5]);
    let opts = LionsOptions { epsilon: 1e-4, replicates: 400 };
    let e = lions_derivative_flow(&oracle(3, 20, 4), &c, &mu, 0, 0, 0.5, &|x| x[0] * x[0], &opts).unwrap();
    assert!(e.stderr > 0.0);
    assert!((e.value - 4.0).abs() <= 3.0 * e.stderr + 10.0 * opts.epsilon, "{} ± {}", e.value, e.stderr);
}

#[test]
fn estimates_are_deterministic() {
    let c = builtin_problem("holder-drift", 1).unwrap();
    let mu = scalars(&[0.7, -0.2, 1.4]);
    let run = || lions_derivative_flow(&oracle(3, 16, 5), &c, &mu, 1, 0, 0.25, &|x| x[0], &LionsOptions::default()).unwrap();
    assert_eq!(run().value.to_bits(), run().value.to_bits());
}

#[test]
fn vanishing_epsilon_is_a_degenerate_step() {
    let c = builtin_problem("gaussian", 1).unwrap();
    let mu = scalars(&[1e6, 0.0]);
    let opts = LionsOptions { epsilon: 1e-12, replicates: 1 };
    let r = lions_derivative_flow(&oracle(2, 4, 0), &c, &mu, 0, 0, 0.5, &|x| x[0], &opts);
    assert!(matches!(r, Err(Error::DegenerateStep { .. })));
}

#[test]
fn flow_rejects_unsorted_times() {
    assert!(ScalarFlow::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0]).is_err());
}

proptest! {
    #[test]
    fn wasserstein_is_a_metric(a in prop::collection::vec(-10.0f64..10.0, 6),
                               b in prop::collection::vec(-10.0f64..10.0, 6),
                               c in prop::collection::vec(-10.0f64..10.0, 6)) {
        let (ma, mb, mc) = (scalars(&a), scalars(&b), scalars(&c));
        let ab = wasserstein2_1d(&ma, &mb).unwrap();
        prop_assert_eq!(ab, wasserstein2_1d(&mb, &ma).unwrap());
        prop_assert!(ab <= wasserstein2_1d(&ma, &mc).unwrap() + wasserstein2_1d(&mc, &mb).unwrap() + 1e-12);
        let mut sa = a.clone();
        sa.sort_by(f64::total_cmp);
        let mut sb = b.clone();
        sb.sort_by(f64::total_cmp);
        prop_assert_eq!(ab == 0.0, sa == sb);
    }

    #[test]
    fn moment_is_linear(v in prop::collection::vec(-5.0f64..5.0, 1..20), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mu = scalars(&v);
        let f = |x: &[f64]| x[0].sin();
        let g = |x: &[f64]| x[0] * x[0];
        let lhs = moment(&mu, |x| a * f(x) + b * g(x)).unwrap();
        let rhs = a * moment(&mu, f).unwrap() + b * moment(&mu, g).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn csv_round_trip(v in prop::collection::vec(-1e3f64..1e3, 1..10)) {
        let mu = scalars(&v);
        let mut buf = Vec::new();
        mu.write_csv(&mut buf).unwrap();
        prop_assert_eq!(EmpiricalMeasure::read_csv(&buf[..]).unwrap(), mu);
    }
}
