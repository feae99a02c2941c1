//! Quantitative checks built on the simulator and the series: exponent fits,
//! bound reports, the Lions-derivative scan, both representations of u and the
//! gradient scan.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frozen::{gaussian, majorant_1d, GaussianMajorant};
use crate::io::fmt_f64;
use crate::measure::{lions_derivative_table, EmpiricalMeasure, LionsOptions, ScalarFlow, SimulationOracle};
use crate::model::CoefficientSet;
use crate::parametrix::kernel::frozen_direct;
use crate::parametrix::{
    constants, fit_kernel, iterate_kernel, kernel_table, parametrix_density_grid, series_table, KernelFit, KernelTable,
    ParametrixConfig, SpaceTimeGrid,
};
use crate::rng::derive_seed;
use crate::simulator::{euler_maruyama_terminal, euler_maruyama_visit, simulate_mkv, SimulationConfig};

/// Allowed shortfall of a fitted exponent below its theoretical floor.
pub const EXPONENT_TOLERANCE: f64 = 0.15;
/// Slack of bound checks: pass iff ratio <= 1 + BOUND_SLACK.
pub const BOUND_SLACK: f64 = 1e-6;
/// Magnitudes below this are treated as zero in fits.
pub const DEGENERATE_MAGNITUDE: f64 = 1e-12;
pub const MIN_FIT_SAMPLES: usize = 3;

/// Source term b~(s, y, w) of the linear PDE.
pub type Source<'a> = &'a dyn Fn(f64, &[f64], f64) -> f64;

/// Least-squares line log magnitude = slope log x + intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    /// (log x, log magnitude) of every point used.
    pub samples: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Fewer than [`MIN_FIT_SAMPLES`] magnitudes above [`DEGENERATE_MAGNITUDE`];
    /// slope and intercept are NaN.
    pub degenerate: bool,
}

impl ExponentFit {
    /// Fits points (x, magnitude) with x > 0.
    pub fn fit(points: &[(f64, f64)]) -> Result<ExponentFit> {
        if points.len() < MIN_FIT_SAMPLES {
            return Err(Error::Config(format!("an exponent fit needs at least {MIN_FIT_SAMPLES} points")));
        }
        if points.iter().any(|p| !(p.0 > 0.0) || !p.1.is_finite()) {
            return Err(Error::Config("fit abscissae must be positive and magnitudes finite".into()));
        }
        let samples: Vec<(f64, f64)> =
            points.iter().filter(|p| p.1.abs() >= DEGENERATE_MAGNITUDE).map(|p| (p.0.ln(), p.1.abs().ln())).collect();
        if samples.len() < MIN_FIT_SAMPLES {
            return Ok(ExponentFit { samples, slope: f64::NAN, intercept: f64::NAN, r_squared: 0.0, degenerate: true });
        }
        let n = samples.len() as f64;
        let mx = samples.iter().map(|p| p.0).sum::<f64>() / n;
        let my = samples.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = samples.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = samples.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let syy: f64 = samples.iter().map(|p| (p.1 - my).powi(2)).sum();
        if sxx == 0.0 {
            return Err(Error::Config("fit abscissae are all equal".into()));
        }
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
        Ok(ExponentFit { samples, slope, intercept, r_squared, degenerate: false })
    }
}

/// Outcome of checking measured values against a bound on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub claim: String,
    pub grid_size: usize,
    /// max over the grid of |measured| / bound.
    pub max_ratio: f64,
    pub slack: f64,
    pub pass: bool,
    pub constants: BTreeMap<String, f64>,
}

impl BoundReport {
    pub fn new(claim: impl Into<String>, grid_size: usize, max_ratio: f64, constants: BTreeMap<String, f64>) -> Self {
        BoundReport {
            claim: claim.into(),
            grid_size,
            max_ratio,
            slack: BOUND_SLACK,
            pass: max_ratio <= 1.0 + BOUND_SLACK,
            constants,
        }
    }
}

/// Smallest C with |value| <= C p^_c(tau, dist) on every sample (tau, dist, value).
pub fn domination_constant(samples: &[(f64, f64, f64)], majorant: &GaussianMajorant) -> f64 {
    samples.iter().map(|&(tau, d, v)| v.abs() / majorant_1d(majorant.c, tau, d)).fold(0.0, f64::max)
}

/// max |value| / (C p^_c) over samples (tau, dist, value).
pub fn check_gaussian_domination(
    claim: &str,
    samples: &[(f64, f64, f64)],
    majorant: &GaussianMajorant,
    prefactor: f64,
) -> BoundReport {
    let ratio = domination_constant(samples, majorant) / prefactor;
    let constants = BTreeMap::from([("C".to_string(), prefactor), ("c".to_string(), majorant.c)]);
    BoundReport::new(claim, samples.len(), ratio, constants)
}

/// Frozen density p~^y(t, x; s, y) on a spatial grid, as (s - t, |y - x|, value).
pub fn frozen_density_samples(
    coeffs: &CoefficientSet,
    flow: &ScalarFlow,
    t: f64,
    x: f64,
    s: f64,
    config: &ParametrixConfig,
) -> Result<Vec<(f64, f64, f64)>> {
    coeffs.require_scalar()?;
    flow.covers(t, s)?;
    let grid = SpaceTimeGrid::new(coeffs.profile(), t, x, s, config)?;
    grid.space
        .points()
        .into_iter()
        .map(|y| {
            let (m, a) = frozen_direct(coeffs, flow, y, t, s, None, None);
            if !(a > 0.0) {
                return Err(Error::NotPositiveDefinite);
            }
            Ok((s - t, (y - x).abs(), gaussian(y - x - m, a)))
        })
        .collect()
}

/// Truncated series p(t, x; s, y) on the spatial grid, as (s - t, |y - x|, value).
pub fn series_density_samples(
    coeffs: &CoefficientSet,
    flow: &ScalarFlow,
    t: f64,
    x: f64,
    s: f64,
    config: &ParametrixConfig,
) -> Result<Vec<(f64, f64, f64)>> {
    let table = series_table(coeffs, flow, t, x, s, config, false)?;
    let last = table.grid.levels.len() - 1;
    let density = table.density(last);
    Ok(table.grid.space.points().into_iter().zip(density).map(|(y, v)| (s - t, (y - x).abs(), v)).collect())
}

/// Kernel-bound check: constants fitted once on the order-1 tables of all
/// terminal points, then the iterated tables up to `max_order` are compared with
/// C_k (s - s')^{k gamma/2 - 1} Chat p^_c using the same constants.
#[derive(Clone, Debug)]
pub struct KernelBoundCheck {
    pub fit: KernelFit,
    /// One report per order 1..=max_order.
    pub reports: Vec<BoundReport>,
    pub tables: Vec<Vec<KernelTable>>,
}

impl KernelBoundCheck {
    pub fn pass(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }
}

pub fn check_kernel_bound(
    coeffs: &CoefficientSet,
    flow: &ScalarFlow,
    t: f64,
    s: f64,
    terminals: &[f64],
    max_order: usize,
    config: &ParametrixConfig,
) -> Result<KernelBoundCheck> {
    if terminals.is_empty() || max_order == 0 {
        return Err(Error::Config("need at least one terminal point and order".into()));
    }
    let profile = coeffs.profile();
    let gamma = profile.gamma_a;
    let mut tables: Vec<Vec<KernelTable>> = Vec::new();
    for &y in terminals {
        let grid = SpaceTimeGrid::new(profile, t, y, s, config)?;
        let mut chain = vec![kernel_table(coeffs, flow, &grid, y)?];
        for _ in 1..max_order {
            let next = iterate_kernel(coeffs, flow, chain.last().unwrap(), config)?;
            chain.push(next);
        }
        tables.push(chain);
    }
    let samples: Vec<(f64, f64, f64)> = tables.iter().flat_map(|c| c[0].nodes().map(|(a, b, v)| (a, b, v.abs()))).collect();
    let fit = fit_kernel(&samples, gamma, profile.lambda);
    let mut reports = Vec::with_capacity(max_order);
    let consts = if fit.prefactor > 0.0 { Some(constants(fit.big_c, gamma, max_order)?) } else { None };
    for k in 1..=max_order {
        let mut ratio: f64 = 0.0;
        let mut count = 0;
        for chain in &tables {
            for (tau, d, v) in chain[k - 1].nodes() {
                count += 1;
                let bound = match &consts {
                    Some(c) => c.value(k) * tau.powf(0.5 * k as f64 * gamma - 1.0) * fit.c_hat * majorant_1d(fit.rate, tau, d),
                    None => 0.0,
                };
                let r = if v == 0.0 { 0.0 } else if bound > 0.0 { v.abs() / bound } else { f64::INFINITY };
                ratio = ratio.max(r);
            }
        }
        let mut named = BTreeMap::from([
            ("C".to_string(), fit.big_c),
            ("C_hat".to_string(), fit.c_hat),
            ("c".to_string(), fit.rate),
            ("gamma".to_string(), gamma),
        ]);
        if let Some(c) = &consts {
            named.insert(format!("C_{k}"), c.value(k));
        }
        reports.push(BoundReport::new(format!("kernel_bound_k{k}"), count, ratio, named));
    }
    Ok(KernelBoundCheck { fit, reports, tables })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub oracle: SimulationOracle,
    #[serde(default)]
    pub options: LionsOptions,
    #[serde(default)]
    pub coordinate: usize,
}

/// sup over particles z of |d_mu <phi, law X_s>(z)| for each s, and its fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeScan {
    pub t: f64,
    pub alpha: f64,
    pub s_values: Vec<f64>,
    pub magnitudes: Vec<f64>,
    /// Standard error at the maximizing particle.
    pub stderr: Vec<f64>,
    /// Index of the maximizing particle.
    pub argmax: Vec<usize>,
    pub fit: ExponentFit,
}

impl DerivativeScan {
    /// The rate (alpha - 1)/2 below which the fitted slope must not fall.
    pub fn floor(&self) -> f64 {
        0.5 * (self.alpha - 1.0)
    }

    pub fn pass(&self) -> bool {
        !self.fit.degenerate && self.fit.slope >= self.floor() - EXPONENT_TOLERANCE
    }

    /// Columns s, s_minus_t, magnitude, log_s_minus_t, log_magnitude.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["s", "s_minus_t", "magnitude", "log_s_minus_t", "log_magnitude"])?;
        for (s, m) in self.s_values.iter().zip(&self.magnitudes) {
            let dt = s - self.t;
            w.write_record([fmt_f64(*s), fmt_f64(dt), fmt_f64(*m), fmt_f64(dt.ln()), fmt_f64(m.ln())])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn mu_derivative_scan(
    coeffs: &CoefficientSet,
    mu0: &EmpiricalMeasure,
    phi: &dyn Fn(&[f64]) -> f64,
    alpha: f64,
    s_values: &[f64],
    config: &ScanConfig,
) -> Result<DerivativeScan> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!("Hölder exponent {alpha} is outside (0, 1]")));
    }
    let sim = &config.oracle.config;
    let t = sim.t;
    let idx: Vec<usize> = s_values
        .iter()
        .map(|&s| {
            if !(s > t && s <= sim.horizon) {
                return Err(Error::Config(format!("scan time {s} is outside (t, T]")));
            }
            sim.grid_index(s)
        })
        .collect::<Result<_>>()?;
    let z: Vec<usize> = (0..mu0.len()).collect();
    let table = lions_derivative_table(&config.oracle, coeffs, mu0, &z, config.coordinate, &[phi], &config.options)?;
    let mut magnitudes = Vec::with_capacity(idx.len());
    let mut stderr = Vec::with_capacity(idx.len());
    let mut argmax = Vec::with_capacity(idx.len());
    for &k in &idx {
        let (best, mag) = (0..z.len())
            .map(|iz| (iz, table.mean[0][iz][k].abs()))
            .fold((0, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
        magnitudes.push(mag);
        stderr.push(table.stderr[0][best][k]);
        argmax.push(z[best]);
    }
    let points: Vec<(f64, f64)> = s_values.iter().zip(&magnitudes).map(|(s, m)| (s - t, *m)).collect();
    let fit = ExponentFit::fit(&points)?;
    Ok(DerivativeScan { t, alpha, s_values: s_values.to_vec(), magnitudes, stderr, argmax, fit })
}

fn fk_tol() -> f64 {
    1e-8
}

fn fk_m_max() -> usize {
    25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeynmanKacConfig {
    /// Grid, particle count and seed of the law flow; `n_paths` paths from x
    /// then reuse its grid.
    pub simulation: SimulationConfig,
    pub n_paths: usize,
    #[serde(default = "fk_tol")]
    pub tol: f64,
    #[serde(default = "fk_m_max")]
    pub m_max: usize,
}

/// Stream tag separating the paths from x from the particle system's noise.
const FK_STREAM: u64 = 0x6b66;

/// Monte Carlo of E int_t^T b~(r, X_r^{t,x}, w1(r)) dr under a given flow, with
/// the trapezoid rule on the simulation grid. Returns (value, standard error).
pub fn feynman_kac_u_with_flow(
    coeffs: &CoefficientSet,
    b_tilde: Source,
    x: &[f64],
    flow: &ScalarFlow,
    config: &SimulationConfig,
) -> Result<(f64, f64)> {
    let m = config.n_steps;
    let times = config.times();
    let w1: Vec<f64> = times.iter().map(|&r| flow.at(r).0).collect();
    let n = config.n_particles;
    let mut cfg = config.clone();
    cfg.seed = derive_seed(config.seed, FK_STREAM);
    let mut acc = vec![0.0; n];
    euler_maruyama_visit(coeffs, flow, x, &cfg, |i, k, y| {
        let wt = if k == 0 || k == m { 0.5 } else { 1.0 };
        acc[i] += wt * b_tilde(times[k], y, w1[k]);
    })?;
    let h = config.step();
    let vals: Vec<f64> = acc.iter().map(|a| a * h).collect();
    let nf = n as f64;
    let mean = vals.iter().sum::<f64>() / nf;
    let stderr = if n > 1 {
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        (var / nf).sqrt()
    } else {
        0.0
    };
    Ok((mean, stderr))
}

/// Feynman–Kac value of u(t, x, mu0): the flow from a converged Picard
/// iteration started at time t, then paths from x under it.
pub fn feynman_kac_u(
    coeffs: &CoefficientSet,
    b_tilde: Source,
    t: f64,
    x: &[f64],
    mu0: &EmpiricalMeasure,
    config: &FeynmanKacConfig,
) -> Result<(f64, f64)> {
    let mut sim = config.simulation.clone();
    sim.t = t;
    let flow = simulate_mkv(coeffs, mu0, &sim, config.tol, config.m_max)?.flow;
    let paths = SimulationConfig { n_particles: config.n_paths, ..sim };
    feynman_kac_u_with_flow(coeffs, b_tilde, x, &flow, &paths)
}

/// Levels this close to t use the order-0 Gaussian alone, integrated on its own scale.
pub const ANALYTIC_LAYER: f64 = 1e-3;

fn order_zero_layer(coeffs: &CoefficientSet, b_tilde: Source, flow: &ScalarFlow, t: f64, x: f64, r: f64) -> Result<f64> {
    let w1 = flow.at(r).0;
    let sd = (coeffs.profile().lambda * (r - t)).sqrt();
    let n = 160;
    let h = 20.0 * sd / n as f64;
    let mut sum = 0.0;
    for p in 0..=n {
        let y = x - 10.0 * sd + p as f64 * h;
        let (m, a) = frozen_direct(coeffs, flow, y, t, r, None, None);
        if !(a > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let wt = if p == 0 || p == n { 0.5 } else { 1.0 };
        sum += wt * b_tilde(r, &[y], w1) * gaussian(y - x - m, a);
    }
    Ok(sum * h)
}

/// int_t^T int b~(r, y, w1(r)) p(t, x; r, y) dy dr with the truncated series,
/// T = flow end, trapezoid in space and over the graded time levels.
pub fn parametrix_u_with(
    coeffs: &CoefficientSet,
    b_tilde: Source,
    t: f64,
    x: f64,
    horizon: f64,
    flow: &ScalarFlow,
    config: &ParametrixConfig,
) -> Result<f64> {
    let table = series_table(coeffs, flow, t, x, horizon, config, true)?;
    let levels = &table.grid.levels;
    let space = table.grid.space;
    let points = space.points();
    let lambda = coeffs.profile().lambda;
    let mut vals = Vec::with_capacity(levels.len());
    for (j, &r) in levels.iter().enumerate() {
        let tau = r - t;
        let v = if j == 0 {
            b_tilde(t, &[x], flow.at(t).0)
        } else if tau < ANALYTIC_LAYER || (tau / lambda).sqrt() < 3.0 * space.h {
            order_zero_layer(coeffs, b_tilde, flow, t, x, r)?
        } else {
            let w1 = flow.at(r).0;
            let d = table.density(j);
            let n = d.len();
            let mut s = 0.0;
            for i in 0..n {
                let wt = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                s += wt * b_tilde(r, &[points[i]], w1) * d[i];
            }
            s * space.h
        };
        vals.push(v);
    }
    Ok((1..levels.len()).map(|j| 0.5 * (levels[j] - levels[j - 1]) * (vals[j] + vals[j - 1])).sum())
}

/// [`parametrix_u_with`] at default resolution with horizon T = flow end.
pub fn parametrix_u(coeffs: &CoefficientSet, b_tilde: Source, t: f64, x: f64, flow: &ScalarFlow, order: usize) -> Result<f64> {
    parametrix_u_with(coeffs, b_tilde, t, x, flow.end(), flow, &ParametrixConfig::default().with_order(order))
}

fn grad_delta() -> f64 {
    0.02
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientConfig {
    pub t: f64,
    /// Simulation time step; each horizon gets ceil((T - t)/step) steps.
    pub step: f64,
    pub n_particles: usize,
    pub seed: u64,
    #[serde(default = "fk_tol")]
    pub tol: f64,
    #[serde(default = "fk_m_max")]
    pub m_max: usize,
    /// Central-difference step in x.
    #[serde(default = "grad_delta")]
    pub delta: f64,
    #[serde(default)]
    pub parametrix: ParametrixConfig,
    /// Measure derivative settings; skipped when absent.
    #[serde(default)]
    pub lions: Option<LionsOptions>,
    /// Particles of mu0 at which d_mu u is evaluated.
    #[serde(default)]
    pub z_indices: Vec<usize>,
    /// Flow perturbation size of the chain rule for d_mu u.
    #[serde(default = "flow_epsilon")]
    pub flow_epsilon: f64,
}

fn flow_epsilon() -> f64 {
    1e-2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientScan {
    pub x: f64,
    pub horizons: Vec<f64>,
    pub u: Vec<f64>,
    pub dx: Vec<f64>,
    pub dxx: Vec<f64>,
    /// max over z of |d_mu u(z)|; empty when not requested.
    pub dmu: Vec<f64>,
    pub fit_dx: ExponentFit,
    pub fit_dxx: ExponentFit,
    pub fit_dmu: Option<ExponentFit>,
}

impl GradientScan {
    /// Positive fitted exponent for |d_x u|.
    pub fn pass(&self) -> bool {
        !self.fit_dx.degenerate && self.fit_dx.slope > 0.0
    }

    /// Columns T, u, dx_u, dxx_u, dmu_u (empty when not computed).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["T", "u", "dx_u", "dxx_u", "dmu_u"])?;
        for (i, h) in self.horizons.iter().enumerate() {
            let dmu = self.dmu.get(i).map(|v| fmt_f64(*v)).unwrap_or_default();
            w.write_record([fmt_f64(*h), fmt_f64(self.u[i]), fmt_f64(self.dx[i]), fmt_f64(self.dxx[i]), dmu])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// |d_x u|, |d_x^2 u| and optionally |d_mu u| at (t, x, mu0) for each horizon T,
/// with the log–log fits against T - t.
///
/// d_x u and d_x^2 u are central differences of the series representation.
/// d_mu u(z) follows the chain rule through the flow: the coupled-pair
/// estimator gives D_i(r) = d_mu <phi_i, law X_r>(z) and
/// d_mu u(z) ~ (u(w + eps D) - u(w))/eps with both u from the series.
pub fn u_gradient_bounds(
    coeffs: &CoefficientSet,
    b_tilde: Source,
    x: f64,
    mu0: &EmpiricalMeasure,
    horizons: &[f64],
    config: &GradientConfig,
) -> Result<GradientScan> {
    coeffs.require_scalar()?;
    if !(config.step > 0.0 && config.delta > 0.0) {
        return Err(Error::Config("step and delta must be positive".into()));
    }
    let t = config.t;
    let (mut u, mut dx, mut dxx, mut dmu) = (vec![], vec![], vec![], vec![]);
    for &horizon in horizons {
        if !(horizon > t) {
            return Err(Error::TimeOrder { t, s: horizon });
        }
        let n_steps = ((horizon - t) / config.step).ceil().max(1.0) as usize;
        let sim = SimulationConfig::new(t, horizon, n_steps, config.n_particles, config.seed, 1);
        let flow = simulate_mkv(coeffs, mu0, &sim, config.tol, config.m_max)?.flow;
        let at = |y: f64, f: &ScalarFlow| parametrix_u_with(coeffs, b_tilde, t, y, horizon, f, &config.parametrix);
        let d = config.delta;
        let (u0, up, um) = (at(x, &flow)?, at(x + d, &flow)?, at(x - d, &flow)?);
        u.push(u0);
        dx.push(((up - um) / (2.0 * d)).abs());
        dxx.push(((up - 2.0 * u0 + um) / (d * d)).abs());
        if let Some(options) = &config.lions {
            let oracle = SimulationOracle { config: sim.clone(), tol: config.tol, m_max: config.m_max };
            let phi1 = coeffs.phi1_fn();
            let phi2 = coeffs.phi2_fn();
            let (f1, f2) = (|y: &[f64]| phi1(y), |y: &[f64]| phi2(y));
            let table = lions_derivative_table(&oracle, coeffs, mu0, &config.z_indices, 0, &[&f1, &f2], options)?;
            let mut best: f64 = 0.0;
            for iz in 0..config.z_indices.len() {
                let pert = flow.perturbed(&table.mean[0][iz], &table.mean[1][iz], config.flow_epsilon)?;
                let v = (at(x, &pert)? - u0) / config.flow_epsilon;
                best = best.max(v.abs());
            }
            dmu.push(best);
        }
    }
    let pts = |v: &[f64]| -> Vec<(f64, f64)> { horizons.iter().zip(v).map(|(h, m)| (h - t, *m)).collect() };
    let fit_dx = ExponentFit::fit(&pts(&dx))?;
    let fit_dxx = ExponentFit::fit(&pts(&dxx))?;
    let fit_dmu = if dmu.is_empty() { None } else { Some(ExponentFit::fit(&pts(&dmu))?) };
    Ok(GradientScan { x, horizons: horizons.to_vec(), u, dx, dxx, dmu, fit_dx, fit_dxx, fit_dmu })
}

/// Density values of the truncated series at `ys`, as (s - t, |y - x|, value).
pub fn series_point_samples(
    coeffs: &CoefficientSet,
    flow: &ScalarFlow,
    t: f64,
    x: f64,
    s: f64,
    ys: &[f64],
    config: &ParametrixConfig,
) -> Result<Vec<(f64, f64, f64)>> {
    let res = parametrix_density_grid(coeffs, flow, t, x, s, ys, config)?;
    Ok(ys.iter().zip(res).map(|(y, r)| (s - t, (y - x).abs(), r.value)).collect())
}

/// Allowed absolute excess over three binomial standard errors per bin.
pub const HISTOGRAM_FLOOR: f64 = 1e-3;

/// Euler–Maruyama histogram of X_s^{t,x} against bin integrals of the series on
/// x ± 4 sqrt(Lambda (s - t)).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramComparison {
    pub edges: Vec<f64>,
    pub monte_carlo: Vec<f64>,
    pub series: Vec<f64>,
    /// Binomial standard error of each Monte Carlo bin probability.
    pub stderr: Vec<f64>,
    /// max over bins of |mc - series| / (3 stderr + floor).
    pub max_ratio: f64,
}

impl HistogramComparison {
    pub fn pass(&self) -> bool {
        self.max_ratio <= 1.0
    }

    /// Columns bin_lo, bin_hi, monte_carlo, series, stderr.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bin_lo", "bin_hi", "monte_carlo", "series", "stderr"])?;
        for b in 0..self.series.len() {
            w.write_record(
                [self.edges[b], self.edges[b + 1], self.monte_carlo[b], self.series[b], self.stderr[b]].map(fmt_f64),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `paths` gives the Euler grid on [t, s], the sample count and the seed.
pub fn histogram_agreement(
    coeffs: &CoefficientSet,
    flow: &ScalarFlow,
    x: f64,
    paths: &SimulationConfig,
    bins: usize,
    config: &ParametrixConfig,
) -> Result<HistogramComparison> {
    coeffs.require_scalar()?;
    if bins == 0 {
        return Err(Error::Config("need at least one bin".into()));
    }
    let (t, s) = (paths.t, paths.horizon);
    let half = 4.0 * (coeffs.profile().lambda * (s - t)).sqrt();
    let (lo, width) = (x - half, 2.0 * half / bins as f64);
    let edges: Vec<f64> = (0..=bins).map(|b| lo + b as f64 * width).collect();
    // Simpson on 8 panels per bin
    let sub = 8;
    let hy = width / sub as f64;
    let ys: Vec<f64> = (0..=bins * sub).map(|i| lo + i as f64 * hy).collect();
    let dens: Vec<f64> = parametrix_density_grid(coeffs, flow, t, x, s, &ys, config)?.into_iter().map(|r| r.value).collect();
    let series: Vec<f64> = (0..bins)
        .map(|b| {
            let f = &dens[b * sub..=(b + 1) * sub];
            let inner: f64 = (1..sub).map(|i| if i % 2 == 1 { 4.0 * f[i] } else { 2.0 * f[i] }).sum();
            hy / 3.0 * (f[0] + inner + f[sub])
        })
        .collect();
    let terminal = euler_maruyama_terminal(coeffs, flow, &[x], paths)?;
    let mut counts = vec![0usize; bins];
    for v in terminal {
        let b = ((v - lo) / width).floor();
        if b >= 0.0 && (b as usize) < bins {
            counts[b as usize] += 1;
        }
    }
    let n = paths.n_particles as f64;
    let monte_carlo: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let stderr: Vec<f64> = monte_carlo.iter().map(|p| (p * (1.0 - p) / n).sqrt()).collect();
    let max_ratio = (0..bins)
        .map(|b| (monte_carlo[b] - series[b]).abs() / (3.0 * stderr[b] + HISTOGRAM_FLOOR))
        .fold(0.0, f64::max);
    Ok(HistogramComparison { edges, monte_carlo, series, stderr, max_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law_is_recovered() {
        let pts: Vec<(f64, f64)> = [0.5, 0.25, 0.125, 0.0625, 0.03125].iter().map(|&x: &f64| (x, 3.0 * x.powf(-0.25))).collect();
        let f = ExponentFit::fit(&pts).unwrap();
        assert!((f.slope + 0.25).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vanishing_magnitudes_are_degenerate() {
        let pts: Vec<(f64, f64)> = (1..6).map(|i| (i as f64, 0.0)).collect();
        let f = ExponentFit::fit(&pts).unwrap();
        assert!(f.degenerate && f.slope.is_nan());
    }

    #[test]
    fn majorant_dominates_itself() {
        let m = GaussianMajorant::new(0.3).unwrap();
        let samples: Vec<(f64, f64, f64)> =
            (1..10).flat_map(|i| (0..5).map(move |j| (0.1 * i as f64, 0.2 * j as f64))).map(|(t, d)| (t, d, majorant_1d(0.3, t, d))).collect();
        let r = check_gaussian_domination("self", &samples, &m, 1.0);
        assert!((r.max_ratio - 1.0).abs() < 1e-15 && r.pass);
    }
}
