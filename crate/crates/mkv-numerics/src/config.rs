//! JSON experiment configuration shared by the CLI subcommands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, LionsOptions, ScalarFlow, SimulationOracle};
use crate::model::{builtin_problem, CoefficientSet};
use crate::parametrix::ParametrixConfig;
use crate::rng::{derive_seed, NoiseStream};
use crate::simulator::{simulate_mkv, MkvSolution, SimulationConfig};

const INITIAL_STREAM: u64 = 0x696e;

fn one() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_tol() -> f64 {
    1e-8
}

fn default_m_max() -> usize {
    25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: String,
    #[serde(default = "one")]
    pub dim: usize,
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub initial: InitialLaw,
    pub simulation: SimulationSection,
    #[serde(default)]
    pub density: Option<DensitySection>,
    #[serde(default)]
    pub constants: Option<ConstantsSection>,
    #[serde(default)]
    pub scan: Option<ScanSection>,
    #[serde(default)]
    pub u_check: Option<UCheckSection>,
    #[serde(default)]
    pub verify: Option<VerifySection>,
}

/// Initial law; particle count comes from the simulation section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialLaw {
    /// Independent N(mean, sd^2) coordinates.
    Normal { mean: f64, sd: f64 },
    Dirac { point: Vec<f64> },
    /// Explicit particle coordinates, row-major.
    Particles { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub t: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_steps: usize,
    pub n_particles: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_m_max")]
    pub m_max: usize,
}

fn default_points() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    pub x: f64,
    pub s: f64,
    pub y_min: f64,
    pub y_max: f64,
    #[serde(default = "default_points")]
    pub n_points: usize,
    #[serde(default)]
    pub parametrix: ParametrixConfig,
    #[serde(default)]
    pub histogram: Option<HistogramSection>,
}

fn default_bins() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSection {
    pub n_samples: usize,
    pub n_steps: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSection {
    pub c: f64,
    pub gamma: f64,
    pub k_max: usize,
}

/// Test functions available to the scan, each with its Hölder exponent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestFunctionChoice {
    /// x_1, alpha = 1.
    Identity,
    /// min(|x_1|, 10)^{1/2}, alpha = 1/2.
    SqrtAbs,
    /// 1; every derivative vanishes.
    Constant,
}

impl TestFunctionChoice {
    pub fn alpha(self) -> f64 {
        match self {
            TestFunctionChoice::SqrtAbs => 0.5,
            _ => 1.0,
        }
    }

    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            TestFunctionChoice::Identity => x[0],
            TestFunctionChoice::SqrtAbs => x[0].abs().min(10.0).sqrt(),
            TestFunctionChoice::Constant => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub phi: TestFunctionChoice,
    /// Must lie on the simulation grid in (t, T].
    pub s_values: Vec<f64>,
    #[serde(default)]
    pub lions: LionsOptions,
    #[serde(default)]
    pub coordinate: usize,
}

/// Source terms b~(s, y, w) available to u-check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceChoice {
    Zero,
    One,
    /// y_1.
    Identity,
    /// First drift component of the problem.
    Drift,
    /// cos(y_1) + w/2.
    CosPlusW,
}

impl SourceChoice {
    pub fn build(self, coeffs: &CoefficientSet) -> Box<dyn Fn(f64, &[f64], f64) -> f64> {
        match self {
            SourceChoice::Zero => Box::new(|_, _, _| 0.0),
            SourceChoice::One => Box::new(|_, _, _| 1.0),
            SourceChoice::Identity => Box::new(|_, y, _| y[0]),
            SourceChoice::Drift => {
                let c = coeffs.clone();
                Box::new(move |s, y, w| c.b1(s, y[0], w))
            }
            SourceChoice::CosPlusW => Box::new(|_, y, w| y[0].cos() + 0.5 * w),
        }
    }
}

fn default_delta() -> f64 {
    0.02
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UCheckSection {
    pub x: f64,
    pub source: SourceChoice,
    /// Terminal times T; each gets ceil((T - t)/h) steps at the simulation step h.
    pub horizons: Vec<f64>,
    pub n_paths: usize,
    #[serde(default)]
    pub parametrix: ParametrixConfig,
    /// Also fit |d_x u|, |d_x^2 u| against T - t.
    #[serde(default)]
    pub gradient: bool,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_order() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub x: f64,
    /// Values of s - t for the density domination checks.
    pub horizons: Vec<f64>,
    /// Terminal points y of the kernel tables.
    pub kernel_terminals: Vec<f64>,
    #[serde(default = "default_order")]
    pub max_order: usize,
    #[serde(default)]
    pub parametrix: ParametrixConfig,
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let coeffs = builtin_problem(&self.problem, self.dim)?;
        let sim = self.simulation_config();
        sim.validate()?;
        let s = &self.simulation;
        if !(s.tol > 0.0) || s.m_max == 0 {
            return Err(config_error("tol and m_max must be positive"));
        }
        match &self.initial {
            InitialLaw::Normal { mean, sd } => {
                if !(mean.is_finite() && sd.is_finite() && *sd >= 0.0) {
                    return Err(config_error("normal initial law needs finite mean and sd >= 0"));
                }
            }
            InitialLaw::Dirac { point } => {
                if point.len() != self.dim {
                    return Err(config_error("dirac point does not match the dimension"));
                }
            }
            InitialLaw::Particles { values } => {
                if values.len() != self.dim * s.n_particles {
                    return Err(config_error("particle values do not match n_particles * dim"));
                }
            }
        }
        let inside = |r: f64| r > s.t && r <= s.horizon;
        if let Some(d) = &self.density {
            coeffs.require_scalar()?;
            d.parametrix.validate()?;
            if !inside(d.s) || !(d.y_max > d.y_min) || d.n_points < 2 {
                return Err(config_error("density needs s in (t, T], y_min < y_max and n_points >= 2"));
            }
            if let Some(h) = &d.histogram {
                if h.n_samples == 0 || h.n_steps == 0 || h.bins == 0 {
                    return Err(config_error("histogram sizes must be positive"));
                }
            }
        }
        if let Some(c) = &self.constants {
            crate::parametrix::constants(c.c, c.gamma, c.k_max)?;
        }
        if let Some(sc) = &self.scan {
            if sc.s_values.len() < crate::estimates::MIN_FIT_SAMPLES {
                return Err(config_error("scan needs at least three s values"));
            }
            for &v in &sc.s_values {
                if !inside(v) {
                    return Err(config_error(format!("scan time {v} is outside (t, T]")));
                }
                sim.grid_index(v)?;
            }
            if sc.coordinate >= self.dim || !(sc.lions.epsilon > 0.0) || sc.lions.replicates == 0 {
                return Err(config_error("scan needs a valid coordinate, epsilon > 0 and replicates > 0"));
            }
        }
        if let Some(u) = &self.u_check {
            coeffs.require_scalar()?;
            u.parametrix.validate()?;
            if u.horizons.is_empty() || u.horizons.iter().any(|&h| !(h > s.t)) {
                return Err(config_error("u-check horizons must exceed t"));
            }
            if u.n_paths == 0 || !(u.delta > 0.0) {
                return Err(config_error("u-check needs n_paths > 0 and delta > 0"));
            }
            if u.gradient && u.horizons.len() < crate::estimates::MIN_FIT_SAMPLES {
                return Err(config_error("gradient fit needs at least three horizons"));
            }
        }
        if let Some(v) = &self.verify {
            coeffs.require_scalar()?;
            v.parametrix.validate()?;
            if v.horizons.is_empty() || v.horizons.iter().any(|&h| !inside(s.t + h)) {
                return Err(config_error("verify horizons must lie in (0, T - t]"));
            }
            if v.kernel_terminals.is_empty() || v.max_order == 0 {
                return Err(config_error("verify needs kernel terminals and max_order >= 1"));
            }
        }
        Ok(())
    }

    pub fn coefficients(&self) -> Result<CoefficientSet> {
        builtin_problem(&self.problem, self.dim)
    }

    pub fn simulation_config(&self) -> SimulationConfig {
        let s = &self.simulation;
        SimulationConfig::new(s.t, s.horizon, s.n_steps, s.n_particles, self.seed, self.dim)
    }

    /// Simulation grid of the same step size on [t, horizon].
    pub fn simulation_to(&self, horizon: f64) -> SimulationConfig {
        let s = &self.simulation;
        let h = (s.horizon - s.t) / s.n_steps as f64;
        let steps = ((horizon - s.t) / h - 1e-9).ceil().max(1.0) as usize;
        SimulationConfig::new(s.t, horizon, steps, s.n_particles, self.seed, self.dim)
    }

    pub fn oracle(&self) -> SimulationOracle {
        SimulationOracle { config: self.simulation_config(), tol: self.simulation.tol, m_max: self.simulation.m_max }
    }

    pub fn initial_measure(&self) -> Result<EmpiricalMeasure> {
        let n = self.simulation.n_particles;
        let d = self.dim;
        match &self.initial {
            InitialLaw::Normal { mean, sd } => {
                let mut stream = NoiseStream::new(derive_seed(self.seed, INITIAL_STREAM), 0, n * d);
                let mut z = vec![0.0; n * d];
                stream.standard_normals(0, &mut z);
                EmpiricalMeasure::new(d, z.into_iter().map(|v| mean + sd * v).collect())
            }
            InitialLaw::Dirac { point } => EmpiricalMeasure::new(d, point.repeat(n)),
            InitialLaw::Particles { values } => EmpiricalMeasure::new(d, values.clone()),
        }
    }

    pub fn solve(&self) -> Result<MkvSolution> {
        self.solve_to(self.simulation.horizon)
    }

    pub fn solve_to(&self, horizon: f64) -> Result<MkvSolution> {
        let coeffs = self.coefficients()?;
        let mu0 = self.initial_measure()?;
        simulate_mkv(&coeffs, &mu0, &self.simulation_to(horizon), self.simulation.tol, self.simulation.m_max)
    }

    pub fn flow(&self) -> Result<ScalarFlow> {
        Ok(self.solve()?.flow)
    }
}
