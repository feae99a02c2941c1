//! Subcommands of the `mkv` runner. Each reads an [`ExperimentConfig`] and
//! writes fixed-header CSV (and JSON summaries) into one output directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::estimates::{
    check_gaussian_domination, check_kernel_bound, domination_constant, feynman_kac_u_with_flow, frozen_density_samples,
    histogram_agreement, mu_derivative_scan, parametrix_u_with, series_density_samples, u_gradient_bounds, BoundReport,
    ExponentFit, GradientConfig, ScanConfig,
};
use crate::frozen::GaussianMajorant;
use crate::io::{create, fmt_f64, write_rows};
use crate::parametrix::{beta, constants, constants_asymptotic, parametrix_density_grid, threshold, HEADROOM};
use crate::simulator::{picard_iterate, SimulationConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Picard,
    Density,
    Constants,
    Verify,
    DerivativeScan,
    UCheck,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Simulate,
        Command::Picard,
        Command::Density,
        Command::Constants,
        Command::Verify,
        Command::DerivativeScan,
        Command::UCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Picard => "picard",
            Command::Density => "density",
            Command::Constants => "constants",
            Command::Verify => "verify",
            Command::DerivativeScan => "derivative-scan",
            Command::UCheck => "u-check",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| Error::Config(format!("unknown subcommand {s}")))
    }
}

/// Exit code for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::UnknownProblem(_) | Error::Unsupported(_) | Error::Domain { .. } => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

/// Loads the config, runs the subcommand and maps the outcome to an exit code.
/// `output_dir` overrides the directory named in the config.
pub fn run(command: Command, config_path: &Path, output_dir: Option<&Path>) -> i32 {
    let outcome = ExperimentConfig::load(config_path).and_then(|cfg| {
        let out = output_dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone());
        std::fs::create_dir_all(&out)?;
        execute(command, &cfg, &out)
    });
    match outcome {
        Ok(true) => EXIT_OK,
        Ok(false) => {
            eprintln!("{command}: verification failed");
            EXIT_FAILURE
        }
        Err(e) => {
            eprintln!("{command}: {e}");
            exit_code(&e)
        }
    }
}

/// Runs one subcommand; `Ok(false)` signals a failed check.
pub fn execute(command: Command, cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    match command {
        Command::Simulate => simulate(cfg, out),
        Command::Picard => picard(cfg, out),
        Command::Density => density(cfg, out),
        Command::Constants => constants_table(cfg, out),
        Command::Verify => verify(cfg, out),
        Command::DerivativeScan => derivative_scan(cfg, out),
        Command::UCheck => u_check(cfg, out),
    }
}

fn missing(section: &str, command: &str) -> Error {
    Error::Config(format!("`{command}` needs a `{section}` section"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let sol = cfg.solve()?;
    sol.paths.write_csv(create(&out.join("paths.csv"))?)?;
    sol.flow.write_csv(create(&out.join("flow.csv"))?)?;
    Ok(true)
}

fn picard(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let report = picard_iterate(
        &cfg.coefficients()?,
        &cfg.initial_measure()?,
        &cfg.simulation_config(),
        cfg.simulation.tol,
        cfg.simulation.m_max,
    )?;
    report.write_csv(create(&out.join("picard.csv"))?)?;
    Ok(true)
}

fn density(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let d = cfg.density.as_ref().ok_or_else(|| missing("density", "density"))?;
    let coeffs = cfg.coefficients()?;
    let flow = cfg.flow()?;
    let t = cfg.simulation.t;
    let n = d.n_points;
    let ys: Vec<f64> = (0..n).map(|i| d.y_min + (d.y_max - d.y_min) * i as f64 / (n - 1) as f64).collect();
    let results = parametrix_density_grid(&coeffs, &flow, t, d.x, d.s, &ys, &d.parametrix)?;
    let order = d.parametrix.order;
    let mut header = vec!["y".to_string(), "density".to_string()];
    header.extend((0..=order).map(|k| format!("order_{k}")));
    header.push("tail_bound".to_string());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = ys.iter().zip(&results).map(|(y, r)| {
        let mut row = vec![fmt_f64(*y), fmt_f64(r.value)];
        row.extend(r.per_order.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(r.tail_bound));
        row
    });
    write_rows(&out.join("density.csv"), &header, rows)?;
    match &d.histogram {
        None => Ok(true),
        Some(h) => {
            let paths = SimulationConfig::new(t, d.s, h.n_steps, h.n_samples, cfg.seed, 1);
            let cmp = histogram_agreement(&coeffs, &flow, d.x, &paths, h.bins, &d.parametrix)?;
            cmp.write_csv(create(&out.join("histogram.csv"))?)?;
            Ok(cmp.pass())
        }
    }
}

fn constants_table(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let c = cfg.constants.as_ref().ok_or_else(|| missing("constants", "constants"))?;
    let table = constants(c.c, c.gamma, c.k_max)?;
    let k0 = threshold(c.gamma);
    let rows = (1..=c.k_max).map(|k| {
        let asym = if k >= k0 { fmt_f64(constants_asymptotic(c.c, c.gamma, k).unwrap_or(f64::NAN)) } else { String::new() };
        vec![k.to_string(), fmt_f64(table.value(k)), fmt_f64(table.log_value(k)), asym]
    });
    write_rows(&out.join("constants.csv"), &["k", "c_k", "log_c_k", "asymptotic"], rows)?;
    Ok(true)
}

fn derivative_scan(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let sc = cfg.scan.as_ref().ok_or_else(|| missing("scan", "derivative-scan"))?;
    let phi = sc.phi;
    let scan = mu_derivative_scan(
        &cfg.coefficients()?,
        &cfg.initial_measure()?,
        &move |x: &[f64]| phi.eval(x),
        phi.alpha(),
        &sc.s_values,
        &ScanConfig { oracle: cfg.oracle(), options: sc.lions.clone(), coordinate: sc.coordinate },
    )?;
    scan.write_csv(create(&out.join("scan.csv"))?)?;
    write_json(&out.join("scan_fit.json"), &scan.fit)?;
    Ok(phi == crate::config::TestFunctionChoice::Constant || scan.pass())
}

fn u_check(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let u = cfg.u_check.as_ref().ok_or_else(|| missing("u_check", "u-check"))?;
    let coeffs = cfg.coefficients()?;
    let source = u.source.build(&coeffs);
    let t = cfg.simulation.t;
    let mut rows = Vec::new();
    let mut pass = true;
    for &horizon in &u.horizons {
        let flow = cfg.solve_to(horizon)?.flow;
        let paths = SimulationConfig { n_particles: u.n_paths, ..cfg.simulation_to(horizon) };
        let (fk, se) = feynman_kac_u_with_flow(&coeffs, &*source, &[u.x], &flow, &paths)?;
        let pu = parametrix_u_with(&coeffs, &*source, t, u.x, horizon, &flow, &u.parametrix)?;
        let (diff, tol) = ((fk - pu).abs(), 3.0 * se + 5e-3);
        pass &= diff <= tol;
        rows.push([horizon, fk, se, pu, diff, tol].map(fmt_f64).to_vec());
    }
    write_rows(&out.join("u.csv"), &["T", "feynman_kac", "stderr", "parametrix", "abs_diff", "tolerance"], rows)?;
    if u.gradient {
        let scan = u_gradient_bounds(&coeffs, &*source, u.x, &cfg.initial_measure()?, &u.horizons, &gradient_config(cfg))?;
        scan.write_csv(create(&out.join("gradient.csv"))?)?;
        write_json(&out.join("gradient_fit.json"), &scan.fit_dx)?;
        pass &= scan.pass();
    }
    Ok(pass)
}

fn gradient_config(cfg: &ExperimentConfig) -> GradientConfig {
    let s = &cfg.simulation;
    let u = cfg.u_check.as_ref().expect("u_check section");
    GradientConfig {
        t: s.t,
        step: (s.horizon - s.t) / s.n_steps as f64,
        n_particles: s.n_particles,
        seed: cfg.seed,
        tol: s.tol,
        m_max: s.m_max,
        delta: u.delta,
        parametrix: u.parametrix.clone(),
        lions: None,
        z_indices: Vec::new(),
        flow_epsilon: 1e-2,
    }
}

/// One entry of verify.json.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyEntry {
    pub pass: bool,
    pub ratio: f64,
    pub constants: BTreeMap<String, f64>,
}

impl From<&BoundReport> for VerifyEntry {
    fn from(r: &BoundReport) -> Self {
        VerifyEntry { pass: r.pass, ratio: r.max_ratio, constants: r.constants.clone() }
    }
}

fn fit_entry(fit: &ExponentFit, floor: f64, pass: bool) -> VerifyEntry {
    let constants = BTreeMap::from([
        ("slope".to_string(), fit.slope),
        ("r_squared".to_string(), fit.r_squared),
        ("floor".to_string(), floor),
    ]);
    // ratio of the allowed floor to the fitted slope margin; <= 1 passes
    let ratio = if fit.degenerate { f64::INFINITY } else { (floor - fit.slope).max(0.0) / crate::estimates::EXPONENT_TOLERANCE };
    VerifyEntry { pass, ratio, constants }
}

/// Every bound check and fit the config allows; writes verify.json.
pub fn verify_entries(cfg: &ExperimentConfig) -> Result<BTreeMap<String, VerifyEntry>> {
    let v = cfg.verify.as_ref().ok_or_else(|| missing("verify", "verify"))?;
    let coeffs = cfg.coefficients()?;
    let flow = cfg.flow()?;
    let t = cfg.simulation.t;
    let lambda = coeffs.profile().lambda;
    let mut entries = BTreeMap::new();

    let majorant = GaussianMajorant::new(0.25 / lambda)?;
    let mut frozen = Vec::new();
    let mut series = Vec::new();
    for &h in &v.horizons {
        frozen.extend(frozen_density_samples(&coeffs, &flow, t, v.x, t + h, &v.parametrix)?);
        series.extend(series_density_samples(&coeffs, &flow, t, v.x, t + h, &v.parametrix)?);
    }
    let big_c = HEADROOM * domination_constant(&frozen, &majorant);
    for (claim, samples) in [("frozen_gaussian_domination", &frozen), ("series_gaussian_domination", &series)] {
        entries.insert(claim.to_string(), VerifyEntry::from(&check_gaussian_domination(claim, samples, &majorant, big_c)));
    }

    let s = t + v.horizons.iter().cloned().fold(0.0, f64::max);
    let kernel = check_kernel_bound(&coeffs, &flow, t, s, &v.kernel_terminals, v.max_order, &v.parametrix)?;
    for r in &kernel.reports {
        entries.insert(r.claim.clone(), VerifyEntry::from(r));
    }

    let err = (beta(0.5, 0.5) - std::f64::consts::PI).abs();
    let beta_report = BoundReport::new("beta_half_half", 1, err / 1e-12, BTreeMap::new());
    entries.insert(beta_report.claim.clone(), VerifyEntry::from(&beta_report));

    if let Some(sc) = &cfg.scan {
        let phi = sc.phi;
        if phi != crate::config::TestFunctionChoice::Constant {
            let scan = mu_derivative_scan(
                &coeffs,
                &cfg.initial_measure()?,
                &move |x: &[f64]| phi.eval(x),
                phi.alpha(),
                &sc.s_values,
                &ScanConfig { oracle: cfg.oracle(), options: sc.lions.clone(), coordinate: sc.coordinate },
            )?;
            entries.insert("mu_derivative_rate".to_string(), fit_entry(&scan.fit, scan.floor(), scan.pass()));
        }
    }
    if let Some(u) = &cfg.u_check {
        let source = u.source.build(&coeffs);
        for &horizon in &u.horizons {
            let flow = cfg.solve_to(horizon)?.flow;
            let paths = SimulationConfig { n_particles: u.n_paths, ..cfg.simulation_to(horizon) };
            let (fk, se) = feynman_kac_u_with_flow(&coeffs, &*source, &[u.x], &flow, &paths)?;
            let pu = parametrix_u_with(&coeffs, &*source, t, u.x, horizon, &flow, &u.parametrix)?;
            let tol = 3.0 * se + 5e-3;
            let report = BoundReport::new(
                format!("representation_T{horizon}"),
                1,
                (fk - pu).abs() / tol,
                BTreeMap::from([("feynman_kac".to_string(), fk), ("parametrix".to_string(), pu), ("stderr".to_string(), se)]),
            );
            entries.insert(report.claim.clone(), VerifyEntry { pass: report.max_ratio <= 1.0, ..VerifyEntry::from(&report) });
        }
        if u.gradient {
            let scan = u_gradient_bounds(&coeffs, &*source, u.x, &cfg.initial_measure()?, &u.horizons, &gradient_config(cfg))?;
            entries.insert("gradient_rate".to_string(), fit_entry(&scan.fit_dx, 0.0, scan.pass()));
        }
    }
    Ok(entries)
}

fn verify(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let entries = verify_entries(cfg)?;
    write_json(&out.join("verify.json"), &entries)?;
    for (claim, e) in &entries {
        println!("{} {claim} ratio={}", if e.pass { "PASS" } else { "FAIL" }, e.ratio);
    }
    Ok(entries.values().all(|e| e.pass))
}
