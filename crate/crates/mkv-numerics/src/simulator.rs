//! Euler–Maruyama for the linearized SDE and Picard iteration over law flows.
//!
//! Given a flow (w1, w2) the particles are independent, so every particle is
//! integrated over the whole grid before the next one starts. Brownian
//! increments are addressed by (seed, particle, global step), which makes
//! Picard stages and horizon windows see exactly the same noise.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{moment, sorted_w2, EmpiricalMeasure, ScalarFlow};
use crate::model::CoefficientSet;
use crate::rng::NoiseStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub t: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_steps: usize,
    pub n_particles: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub dim: usize,
}

fn one() -> usize {
    1
}

impl SimulationConfig {
    pub fn new(t: f64, horizon: f64, n_steps: usize, n_particles: usize, seed: u64, dim: usize) -> Self {
        SimulationConfig { t, horizon, n_steps, n_particles, seed, dim }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t.is_finite() && self.horizon.is_finite() && self.horizon > self.t) {
            return Err(Error::Config(format!("need t < T, got t = {}, T = {}", self.t, self.horizon)));
        }
        if self.n_steps == 0 || self.n_particles == 0 || self.dim == 0 {
            return Err(Error::Config("n_steps, n_particles and dim must be positive".into()));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.horizon - self.t) / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            self.t + k as f64 * self.step()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }

    /// Index of the grid node equal to `s` (up to rounding).
    pub fn grid_index(&self, s: f64) -> Result<usize> {
        let h = self.step();
        let k = ((s - self.t) / h).round();
        if k < 0.0 || k > self.n_steps as f64 || (self.time(k as usize) - s).abs() > 1e-9 * h.max(1e-300) {
            return Err(Error::Config(format!("time {s} is not a node of the simulation grid")));
        }
        Ok(k as usize)
    }
}

/// Pre-drawn Brownian increments, indexed `[particle][step][coordinate]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseArray {
    n_particles: usize,
    n_steps: usize,
    dim: usize,
    data: Vec<f64>,
}

impl NoiseArray {
    /// Draws the increments a streamed run of `config` would use.
    pub fn draw(config: &SimulationConfig) -> Result<Self> {
        config.validate()?;
        let (n, m, d) = (config.n_particles, config.n_steps, config.dim);
        let sqrt_h = config.step().sqrt();
        let mut data = vec![0.0; n * m * d];
        let mut z = vec![0.0; d];
        for i in 0..n {
            let mut stream = NoiseStream::new(config.seed, i as u64, d);
            for k in 0..m {
                stream.standard_normals(k as u64, &mut z);
                for c in 0..d {
                    data[(i * m + k) * d + c] = z[c] * sqrt_h;
                }
            }
        }
        Ok(NoiseArray { n_particles: n, n_steps: m, dim: d, data })
    }

    pub fn increment(&self, i: usize, k: usize) -> &[f64] {
        let o = (i * self.n_steps + k) * self.dim;
        &self.data[o..o + self.dim]
    }
}

/// Particle paths on a time grid, stored `[particle][time][coordinate]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    times: Vec<f64>,
    dim: usize,
    n_particles: usize,
    data: Vec<f64>,
    seed: u64,
}

impl PathEnsemble {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn point(&self, i: usize, k: usize) -> &[f64] {
        let o = (i * self.times.len() + k) * self.dim;
        &self.data[o..o + self.dim]
    }

    /// Empirical law at time index k.
    pub fn marginal(&self, k: usize) -> EmpiricalMeasure {
        let mut v = Vec::with_capacity(self.n_particles * self.dim);
        for i in 0..self.n_particles {
            v.extend_from_slice(self.point(i, k));
        }
        EmpiricalMeasure::new(self.dim, v).expect("paths are finite")
    }

    pub fn terminal(&self) -> EmpiricalMeasure {
        self.marginal(self.times.len() - 1)
    }

    /// One row per (particle, time).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["particle".to_string(), "step".to_string(), "time".to_string()];
        header.extend((0..self.dim).map(|c| format!("x{c}")));
        w.write_record(&header)?;
        for i in 0..self.n_particles {
            for (k, &t) in self.times.iter().enumerate() {
                let mut rec = vec![i.to_string(), k.to_string(), crate::io::fmt_f64(t)];
                rec.extend(self.point(i, k).iter().map(|v| crate::io::fmt_f64(*v)));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Glues `next` (which starts where `self` ends) onto `self`.
    fn append(self, next: PathEnsemble) -> PathEnsemble {
        let (n, d) = (self.n_particles, self.dim);
        let (la, lb) = (self.times.len(), next.times.len());
        let mut times = self.times.clone();
        times.extend_from_slice(&next.times[1..]);
        let lt = times.len();
        let mut data = vec![0.0; n * lt * d];
        for i in 0..n {
            data[i * lt * d..(i * lt + la) * d].copy_from_slice(&self.data[i * la * d..(i + 1) * la * d]);
            data[(i * lt + la) * d..(i + 1) * lt * d]
                .copy_from_slice(&next.data[(i * lb + 1) * d..(i + 1) * lb * d]);
        }
        PathEnsemble { times, dim: d, n_particles: n, data, seed: self.seed }
    }
}

/// A stretch of the global grid: `times[0..=steps]` with global step offset.
struct Segment {
    times: Vec<f64>,
    step_offset: u64,
    seed: u64,
    h: f64,
}

impl Segment {
    fn whole(config: &SimulationConfig) -> Segment {
        Segment { times: config.times(), step_offset: 0, seed: config.seed, h: config.step() }
    }

    fn steps(&self) -> usize {
        self.times.len() - 1
    }
}

fn euler_segment(
    coeffs: &CoefficientSet,
    flow: &ScalarFlow,
    initial: &EmpiricalMeasure,
    seg: &Segment,
    noise: Option<&NoiseArray>,
) -> Result<PathEnsemble> {
    let d = coeffs.dim();
    if initial.dim() != d {
        return Err(Error::Config(format!("initial measure has d = {}, coefficients d = {d}", initial.dim())));
    }
    let m = seg.steps();
    flow.covers(seg.times[0], seg.times[m])?;
    if let Some(nz) = noise {
        if nz.n_particles != initial.len() || nz.n_steps != m || nz.dim != d {
            return Err(Error::Config("noise array shape does not match the simulation".into()));
        }
    }
    let ws: Vec<(f64, f64)> = seg.times[..m].iter().map(|&r| flow.at(r)).collect();
    let n = initial.len();
    let lt = m + 1;
    let sqrt_h = seg.h.sqrt();
    let mut data = vec![0.0; n * lt * d];
    let mut x = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * d];
    let mut z = vec![0.0; d];
    let mut db = vec![0.0; d];
    for i in 0..n {
        x.copy_from_slice(initial.particle(i));
        data[i * lt * d..i * lt * d + d].copy_from_slice(&x);
        let mut stream = NoiseStream::new(seg.seed, i as u64, d);
        for k in 0..m {
            let r = seg.times[k];
            let (w1, w2) = ws[k];
            match noise {
                Some(nz) => db.copy_from_slice(nz.increment(i, k)),
                None => {
                    stream.standard_normals(seg.step_offset + k as u64, &mut z);
                    for c in 0..d {
                        db[c] = z[c] * sqrt_h;
                    }
                }
            }
            coeffs.drift(r, &x, w1, &mut b);
            coeffs.diffusion(r, &x, w2, &mut s);
            for row in 0..d {
                let mut acc = b[row] * seg.h;
                for col in 0..d {
                    acc += s[row * d + col] * db[col];
                }
                x[row] += acc;
            }
            let o = (i * lt + k + 1) * d;
            data[o..o + d].copy_from_slice(&x);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
    }
    Ok(PathEnsemble { times: seg.times.clone(), dim: d, n_particles: n, data, seed: seg.seed })
}

/// Euler–Maruyama with left-point coefficients under a given flow.
pub fn euler_maruyama(
    coeffs: &CoefficientSet,
    flow: &ScalarFlow,
    initial: &EmpiricalMeasure,
    config: &SimulationConfig,
    noise: Option<&NoiseArray>,
) -> Result<PathEnsemble> {
    config.validate()?;
    check_initial(initial, config)?;
    euler_segment(coeffs, flow, initial, &Segment::whole(config), noise)
}

/// Terminal values only; avoids storing whole paths for large ensembles.
pub fn euler_maruyama_terminal(
    coeffs: &CoefficientSet,
    flow: &ScalarFlow,
    x0: &[f64],
    config: &SimulationConfig,
) -> Result<Vec<f64>> {
    let m = config.n_steps;
    let mut out = Vec::with_capacity(config.n_particles * x0.len());
    euler_maruyama_visit(coeffs, flow, x0, config, |_, k, x| {
        if k == m {
            out.extend_from_slice(x);
        }
    })?;
    Ok(out)
}

/// Runs `n_particles` paths from x0 and calls `visit(particle, step, state)` at
/// every grid node, step 0 included, without storing the paths.
pub fn euler_maruyama_visit(
    coeffs: &CoefficientSet,
    flow: &ScalarFlow,
    x0: &[f64],
    config: &SimulationConfig,
    mut visit: impl FnMut(usize, usize, &[f64]),
) -> Result<()> {
    config.validate()?;
    let d = coeffs.dim();
    if x0.len() != d || config.dim != d {
        return Err(Error::Config("start point does not match the dimension".into()));
    }
    flow.covers(config.t, config.horizon)?;
    let m = config.n_steps;
    let h = config.step();
    let sqrt_h = h.sqrt();
    let ws: Vec<(f64, f64)> = (0..m).map(|k| flow.at(config.time(k))).collect();
    let mut x = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * d];
    let mut z = vec![0.0; d];
    for i in 0..config.n_particles {
        x.copy_from_slice(x0);
        visit(i, 0, &x);
        let mut stream = NoiseStream::new(config.seed, i as u64, d);
        for (k, &(w1, w2)) in ws.iter().enumerate() {
            let r = config.time(k);
            stream.standard_normals(k as u64, &mut z);
            coeffs.drift(r, &x, w1, &mut b);
            coeffs.diffusion(r, &x, w2, &mut s);
            for row in 0..d {
                let mut acc = b[row] * h;
                for col in 0..d {
                    acc += s[row * d + col] * (z[col] * sqrt_h);
                }
                x[row] += acc;
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index: i });
            }
            visit(i, k + 1, &x);
        }
    }
    Ok(())
}

fn check_initial(initial: &EmpiricalMeasure, config: &SimulationConfig) -> Result<()> {
    if initial.len() != config.n_particles || initial.dim() != config.dim {
        return Err(Error::Config(format!(
            "initial measure has {} particles in d = {}, config asks for {} in d = {}",
            initial.len(),
            initial.dim(),
            config.n_particles,
            config.dim
        )));
    }
    Ok(())
}

/// Flow of moments <phi_i, law(X_r)> read off the paths at every grid time.
pub fn flow_from_paths(coeffs: &CoefficientSet, paths: &PathEnsemble) -> Result<ScalarFlow> {
    let nt = paths.times().len();
    let mut w1 = Vec::with_capacity(nt);
    let mut w2 = Vec::with_capacity(nt);
    for k in 0..nt {
        let mu = paths.marginal(k);
        w1.push(moment(&mu, |x| coeffs.phi1(x))?);
        w2.push(moment(&mu, |x| coeffs.phi2(x))?);
    }
    ScalarFlow::new(paths.times().to_vec(), w1, w2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardReport {
    pub m_max: usize,
    pub tol: f64,
    /// Delta_m = max_k (1/N) sum_i |X^{m+1}_i(t_k) - X^m_i(t_k)|^2, m = 0, 1, ...
    pub increments: Vec<f64>,
    /// max_k W2(law X^m(t_k), law X^{m+1}(t_k)); coordinate-wise maximum when d > 1.
    pub w2_gaps: Vec<f64>,
    pub converged: bool,
    pub final_flow: ScalarFlow,
}

impl PicardReport {
    pub fn iterations(&self) -> usize {
        self.increments.len()
    }

    /// One row per iteration.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["m", "delta_m", "w2_gap"])?;
        for (m, (d, g)) in self.increments.iter().zip(&self.w2_gaps).enumerate() {
            w.write_record([m.to_string(), crate::io::fmt_f64(*d), crate::io::fmt_f64(*g)])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardOptions {
    pub tol: f64,
    pub m_max: usize,
    /// Keep iterating at least this many times even below tolerance.
    pub min_iterations: usize,
    /// Run exactly this many iterations regardless of tolerance.
    pub fixed_iterations: Option<usize>,
    /// Starting flow; defaults to the constant moments of the initial law.
    pub initial_flow: Option<ScalarFlow>,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions { tol: 1e-8, m_max: 25, min_iterations: 0, fixed_iterations: None, initial_flow: None }
    }
}

fn marginal_gaps(a: &PathEnsemble, b: Option<&PathEnsemble>, x0: &EmpiricalMeasure) -> (f64, f64) {
    let n = a.n_particles();
    let d = a.dim();
    let nt = a.times().len();
    let prev = |i: usize, k: usize| -> &[f64] {
        match b {
            Some(p) => p.point(i, k),
            None => x0.particle(i),
        }
    };
    let mut delta: f64 = 0.0;
    for k in 0..nt {
        let mut acc = 0.0;
        for i in 0..n {
            let (p, q) = (a.point(i, k), prev(i, k));
            for c in 0..d {
                acc += (p[c] - q[c]) * (p[c] - q[c]);
            }
        }
        delta = delta.max(acc / n as f64);
    }
    let mut gap: f64 = 0.0;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    for k in 0..nt {
        for c in 0..d {
            for i in 0..n {
                u[i] = a.point(i, k)[c];
                v[i] = prev(i, k)[c];
            }
            u.sort_by(f64::total_cmp);
            v.sort_by(f64::total_cmp);
            gap = gap.max(sorted_w2(&u, &v));
        }
    }
    (delta, gap)
}

fn picard_segment(
    coeffs: &CoefficientSet,
    x0: &EmpiricalMeasure,
    seg: &Segment,
    opts: &PicardOptions,
) -> Result<(PicardReport, PathEnsemble)> {
    if !(opts.tol > 0.0) && opts.fixed_iterations.is_none() {
        return Err(Error::Config("Picard tolerance must be positive".into()));
    }
    let limit = opts.fixed_iterations.unwrap_or(opts.m_max);
    if limit == 0 {
        return Err(Error::Config("at least one Picard iteration is required".into()));
    }
    let mut flow = match &opts.initial_flow {
        Some(f) => f.clone(),
        None => {
            let w1 = moment(x0, |x| coeffs.phi1(x))?;
            let w2 = moment(x0, |x| coeffs.phi2(x))?;
            ScalarFlow::constant(seg.times.clone(), w1, w2)?
        }
    };
    let mut prev: Option<PathEnsemble> = None;
    let mut increments = Vec::new();
    let mut gaps = Vec::new();
    let mut converged = false;
    for m in 0..limit {
        let paths = euler_segment(coeffs, &flow, x0, seg, None)?;
        let (delta, gap) = marginal_gaps(&paths, prev.as_ref(), x0);
        increments.push(delta);
        gaps.push(gap);
        flow = flow_from_paths(coeffs, &paths)?;
        prev = Some(paths);
        converged = delta <= opts.tol;
        if opts.fixed_iterations.is_none() && converged && m + 1 >= opts.min_iterations {
            break;
        }
    }
    let report = PicardReport {
        m_max: opts.m_max,
        tol: opts.tol,
        increments,
        w2_gaps: gaps,
        converged,
        final_flow: flow,
    };
    Ok((report, prev.expect("at least one iteration")))
}

/// Picard iteration over law flows with common noise across stages.
pub fn picard_iterate(
    coeffs: &CoefficientSet,
    mu0: &EmpiricalMeasure,
    config: &SimulationConfig,
    tol: f64,
    m_max: usize,
) -> Result<PicardReport> {
    let opts = PicardOptions { tol, m_max, ..PicardOptions::default() };
    picard_with(coeffs, mu0, config, &opts).map(|(r, _)| r)
}

/// Picard iteration with full options; also returns the last iterate's paths.
pub fn picard_with(
    coeffs: &CoefficientSet,
    mu0: &EmpiricalMeasure,
    config: &SimulationConfig,
    opts: &PicardOptions,
) -> Result<(PicardReport, PathEnsemble)> {
    config.validate()?;
    check_initial(mu0, config)?;
    picard_segment(coeffs, mu0, &Segment::whole(config), opts)
}

/// Picard iteration followed by one Euler–Maruyama pass under the final flow.
/// Non-convergence is reported, not raised.
pub fn picard_paths(
    coeffs: &CoefficientSet,
    mu0: &EmpiricalMeasure,
    config: &SimulationConfig,
    opts: &PicardOptions,
) -> Result<(PathEnsemble, PicardReport)> {
    let (report, _) = picard_with(coeffs, mu0, config, opts)?;
    let paths = euler_segment(coeffs, &report.final_flow, mu0, &Segment::whole(config), None)?;
    Ok((paths, report))
}

#[derive(Clone, Debug)]
pub struct MkvSolution {
    pub paths: PathEnsemble,
    pub flow: ScalarFlow,
    pub reports: Vec<PicardReport>,
}

/// Converged Picard iteration plus a final pass; errors if Picard stalls.
pub fn simulate_mkv(
    coeffs: &CoefficientSet,
    mu0: &EmpiricalMeasure,
    config: &SimulationConfig,
    tol: f64,
    m_max: usize,
) -> Result<MkvSolution> {
    let opts = PicardOptions { tol, m_max, ..PicardOptions::default() };
    let (paths, report) = picard_paths(coeffs, mu0, config, &opts)?;
    if !report.converged {
        return Err(Error::NotConverged(Box::new(report)));
    }
    let flow = flow_from_paths(coeffs, &paths)?;
    Ok(MkvSolution { paths, flow, reports: vec![report] })
}

/// Default maximal window length for [`picard_windows`].
pub const MAX_WINDOW: f64 = 0.5;

/// Restarts Picard on consecutive windows of length at most `max_window`,
/// each starting from the law reached by the previous one.
pub fn picard_windows(
    coeffs: &CoefficientSet,
    mu0: &EmpiricalMeasure,
    config: &SimulationConfig,
    opts: &PicardOptions,
    max_window: f64,
) -> Result<MkvSolution> {
    config.validate()?;
    check_initial(mu0, config)?;
    if !(max_window > 0.0) {
        return Err(Error::Config("window length must be positive".into()));
    }
    let span = config.horizon - config.t;
    let n_windows = ((span / max_window) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    if n_windows > config.n_steps {
        return Err(Error::Config("fewer steps than windows".into()));
    }
    let all_times = config.times();
    let bounds: Vec<usize> = (0..=n_windows)
        .map(|j| ((j * config.n_steps) as f64 / n_windows as f64).round() as usize)
        .collect();
    let mut x0 = mu0.clone();
    let mut paths: Option<PathEnsemble> = None;
    let mut reports = Vec::new();
    for j in 0..n_windows {
        let seg = Segment {
            times: all_times[bounds[j]..=bounds[j + 1]].to_vec(),
            step_offset: bounds[j] as u64,
            seed: config.seed,
            h: config.step(),
        };
        let wopts = PicardOptions { initial_flow: None, ..opts.clone() };
        let (report, _) = picard_segment(coeffs, &x0, &seg, &wopts)?;
        if !report.converged {
            return Err(Error::NotConverged(Box::new(report)));
        }
        let window_paths = euler_segment(coeffs, &report.final_flow, &x0, &seg, None)?;
        x0 = window_paths.terminal();
        reports.push(report);
        paths = Some(match paths {
            None => window_paths,
            Some(p) => p.append(window_paths),
        });
    }
    let paths = paths.expect("at least one window");
    let flow = flow_from_paths(coeffs, &paths)?;
    Ok(MkvSolution { paths, flow, reports })
}
