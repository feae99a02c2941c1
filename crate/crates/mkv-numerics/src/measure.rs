//! Empirical measures, scalar law flows and Lions derivatives.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CoefficientSet;
use crate::rng::derive_seed;
use crate::simulator::{picard_paths, PicardOptions, SimulationConfig};

/// Uniformly weighted particles in R^d, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    data: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(Error::Config(format!(
                "cannot build a measure of dimension {dim} from {} values",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: pos / dim });
        }
        Ok(EmpiricalMeasure { dim, data })
    }

    pub fn from_scalars(values: Vec<f64>) -> Result<Self> {
        Self::new(1, values)
    }

    pub fn dirac(point: &[f64]) -> Result<Self> {
        Self::new(point.len(), point.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn particles(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// (1/N) sum |X_i|^2
    pub fn second_moment(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>() / self.len() as f64
    }

    /// The same measure with particle `index` moved by `epsilon` along coordinate `j`.
    pub fn shifted(&self, index: usize, j: usize, epsilon: f64) -> Result<Self> {
        if index >= self.len() || j >= self.dim {
            return Err(Error::Config(format!("particle {index}, coordinate {j} out of range")));
        }
        let mut data = self.data.clone();
        data[index * self.dim + j] += epsilon;
        Ok(EmpiricalMeasure { dim: self.dim, data })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (0..self.dim).map(|c| format!("x{c}")).collect();
        w.write_record(&header)?;
        for p in self.particles() {
            w.write_record(p.iter().map(|v| crate::io::fmt_f64(*v)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let dim = r.headers()?.len();
        let mut data = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != dim {
                return Err(Error::GridMismatch { expected: dim, got: rec.len() });
            }
            for field in rec.iter() {
                data.push(field.trim().parse::<f64>().map_err(|e| Error::Config(e.to_string()))?);
            }
        }
        Self::new(dim, data)
    }
}

/// Scalar moments w1(r) = <phi1, mu_r>, w2(r) = <phi2, mu_r> on a time grid,
/// interpolated linearly between nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarFlow {
    times: Vec<f64>,
    w1: Vec<f64>,
    w2: Vec<f64>,
}

/// Relative slack when testing whether a grid covers an interval.
const COVER_SLACK: f64 = 1e-12;

impl ScalarFlow {
    pub fn new(times: Vec<f64>, w1: Vec<f64>, w2: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || w1.len() != times.len() || w2.len() != times.len() {
            return Err(Error::Config("a flow needs at least two nodes and matching lengths".into()));
        }
        if times.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Config("flow times must be strictly increasing".into()));
        }
        if w1.iter().chain(&w2).chain(&times).any(|v| !v.is_finite()) {
            return Err(Error::Config("flow values must be finite".into()));
        }
        Ok(ScalarFlow { times, w1, w2 })
    }

    pub fn constant(times: Vec<f64>, w1: f64, w2: f64) -> Result<Self> {
        let n = times.len();
        Self::new(times, vec![w1; n], vec![w2; n])
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn w1(&self) -> &[f64] {
        &self.w1
    }

    pub fn w2(&self) -> &[f64] {
        &self.w2
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn covers(&self, t: f64, s: f64) -> Result<()> {
        let slack = COVER_SLACK * (1.0 + self.end().abs().max(self.start().abs()));
        if t < self.start() - slack || s > self.end() + slack {
            return Err(Error::Coverage { start: self.start(), end: self.end(), t, s });
        }
        Ok(())
    }

    /// Index k and weight theta with r = (1 - theta) times[k] + theta times[k+1].
    pub fn locate(&self, r: f64) -> (usize, f64) {
        let n = self.times.len();
        if r <= self.times[0] {
            return (0, 0.0);
        }
        if r >= self.times[n - 1] {
            return (n - 2, 1.0);
        }
        let k = self.times.partition_point(|&x| x <= r) - 1;
        let theta = (r - self.times[k]) / (self.times[k + 1] - self.times[k]);
        (k, theta)
    }

    /// (w1(r), w2(r)), clamped to the end values outside the grid.
    pub fn at(&self, r: f64) -> (f64, f64) {
        let (k, th) = self.locate(r);
        (
            self.w1[k] + th * (self.w1[k + 1] - self.w1[k]),
            self.w2[k] + th * (self.w2[k + 1] - self.w2[k]),
        )
    }

    /// w + epsilon * (d1, d2), node by node.
    pub fn perturbed(&self, d1: &[f64], d2: &[f64], epsilon: f64) -> Result<Self> {
        if d1.len() != self.times.len() || d2.len() != self.times.len() {
            return Err(Error::GridMismatch { expected: self.times.len(), got: d1.len().min(d2.len()) });
        }
        let w1 = self.w1.iter().zip(d1).map(|(a, b)| a + epsilon * b).collect();
        let w2 = self.w2.iter().zip(d2).map(|(a, b)| a + epsilon * b).collect();
        Self::new(self.times.clone(), w1, w2)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time", "w1", "w2"])?;
        for k in 0..self.times.len() {
            w.write_record([self.times[k], self.w1[k], self.w2[k]].map(crate::io::fmt_f64))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// (1/N) sum phi(X_i)
pub fn moment(mu: &EmpiricalMeasure, phi: impl Fn(&[f64]) -> f64) -> Result<f64> {
    let mut acc = 0.0;
    for (i, p) in mu.particles().enumerate() {
        let v = phi(p);
        if !v.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
        acc += v;
    }
    Ok(acc / mu.len() as f64)
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// W2 distance between equal-size 1-d empirical measures via the sorted coupling.
pub fn wasserstein2_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::Unsupported("wasserstein2_1d needs d = 1".into()));
    }
    if mu.len() != nu.len() {
        return Err(Error::Unsupported(format!("particle counts differ: {} vs {}", mu.len(), nu.len())));
    }
    Ok(sorted_w2(&sorted(mu.as_slice()), &sorted(nu.as_slice())))
}

pub(crate) fn sorted_w2(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (s / a.len() as f64).sqrt()
}

/// Step of the central difference in [`lions_derivative_linear`].
pub const LINEAR_DIFF_STEP: f64 = 1e-6;

/// Gradient of phi at z, the Lions derivative of nu -> <phi, nu>.
pub fn lions_derivative_linear(phi: impl Fn(&[f64]) -> f64, z: &[f64]) -> Vec<f64> {
    let mut p = z.to_vec();
    (0..z.len())
        .map(|j| {
            p[j] = z[j] + LINEAR_DIFF_STEP;
            let up = phi(&p);
            p[j] = z[j] - LINEAR_DIFF_STEP;
            let down = phi(&p);
            p[j] = z[j];
            (up - down) / (2.0 * LINEAR_DIFF_STEP)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LionsDerivativeEstimate {
    /// Base point X_{z_index}.
    pub z: Vec<f64>,
    pub z_index: usize,
    pub coordinate: usize,
    pub s: f64,
    pub value: f64,
    pub epsilon: f64,
    pub n_particles: usize,
    pub replicates: usize,
    /// Standard error across replicates (0 for a single replicate).
    pub stderr: f64,
}

/// How the coupled pair resolves the law flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationOracle {
    pub config: SimulationConfig,
    /// Picard tolerance of the base run; the perturbed run repeats its iteration count.
    pub tol: f64,
    pub m_max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LionsOptions {
    pub epsilon: f64,
    /// Independent noise replicates averaged into one estimate.
    pub replicates: usize,
}

impl Default for LionsOptions {
    fn default() -> Self {
        LionsOptions { epsilon: 1e-4, replicates: 1 }
    }
}

/// Mean and standard error of coupled-pair estimates at every grid time,
/// indexed `[phi][z][time]`.
#[derive(Clone, Debug)]
pub struct LionsTable {
    pub times: Vec<f64>,
    pub z_indices: Vec<usize>,
    pub mean: Vec<Vec<Vec<f64>>>,
    pub stderr: Vec<Vec<Vec<f64>>>,
    pub replicates: usize,
}

/// Runs base and perturbed simulations for every z in `z_indices` and every
/// replicate, reading all test functions off the same pair of runs.
pub fn lions_derivative_table(
    oracle: &SimulationOracle,
    coeffs: &CoefficientSet,
    mu: &EmpiricalMeasure,
    z_indices: &[usize],
    j: usize,
    phis: &[&dyn Fn(&[f64]) -> f64],
    options: &LionsOptions,
) -> Result<LionsTable> {
    if !(options.epsilon > 0.0) {
        return Err(Error::Config("epsilon must be positive".into()));
    }
    if options.replicates == 0 {
        return Err(Error::Config("replicates must be positive".into()));
    }
    let cfg = &oracle.config;
    cfg.validate()?;
    if mu.len() != cfg.n_particles || mu.dim() != cfg.dim {
        return Err(Error::Config("measure does not match n_particles/dim".into()));
    }
    for &z in z_indices {
        if z >= mu.len() || j >= mu.dim() {
            return Err(Error::Config(format!("particle {z}, coordinate {j} out of range")));
        }
        let x = mu.particle(z);
        if x[j] + options.epsilon == x[j] {
            return Err(Error::DegenerateStep { epsilon: options.epsilon, value: x[j] });
        }
    }
    let times = cfg.times();
    let nt = times.len();
    let nz = z_indices.len();
    let np = phis.len();
    let mut sum = vec![vec![vec![0.0; nt]; nz]; np];
    let mut sum2 = vec![vec![vec![0.0; nt]; nz]; np];

    let shifted: Vec<EmpiricalMeasure> =
        z_indices.iter().map(|&z| mu.shifted(z, j, options.epsilon)).collect::<Result<_>>()?;

    for rep in 0..options.replicates {
        let mut rc = cfg.clone();
        if rep > 0 {
            rc.seed = derive_seed(cfg.seed, rep as u64);
        }
        let base_opts = PicardOptions { tol: oracle.tol, m_max: oracle.m_max, ..PicardOptions::default() };
        let (base, report) = picard_paths(coeffs, mu, &rc, &base_opts)?;
        let fixed = PicardOptions { fixed_iterations: Some(report.increments.len()), ..base_opts };
        for (iz, pert_mu) in shifted.iter().enumerate() {
            let (pert, _) = picard_paths(coeffs, pert_mu, &rc, &fixed)?;
            for (ip, phi) in phis.iter().enumerate() {
                for k in 0..nt {
                    let mut diff = 0.0;
                    for i in 0..mu.len() {
                        diff += phi(pert.point(i, k)) - phi(base.point(i, k));
                    }
                    // N * (v_pert - v_base) / eps with v = (1/N) sum phi
                    let est = diff / options.epsilon;
                    sum[ip][iz][k] += est;
                    sum2[ip][iz][k] += est * est;
                }
            }
        }
    }

    let r = options.replicates as f64;
    let mut mean = sum.clone();
    let mut stderr = sum2.clone();
    for ip in 0..np {
        for iz in 0..nz {
            for k in 0..nt {
                let m = sum[ip][iz][k] / r;
                mean[ip][iz][k] = m;
                stderr[ip][iz][k] = if options.replicates > 1 {
                    let var = ((sum2[ip][iz][k] / r - m * m) * r / (r - 1.0)).max(0.0);
                    (var / r).sqrt()
                } else {
                    0.0
                };
            }
        }
    }
    Ok(LionsTable { times, z_indices: z_indices.to_vec(), mean, stderr, replicates: options.replicates })
}

/// Coupled-pair estimate of the j-th component of the Lions derivative of
/// mu -> <phi, law(X_s)> at the particle X_{z_index}.
///
/// `s` must be a node of the oracle's simulation grid.
#[allow(clippy::too_many_arguments)]
pub fn lions_derivative_flow(
    oracle: &SimulationOracle,
    coeffs: &CoefficientSet,
    mu: &EmpiricalMeasure,
    z_index: usize,
    j: usize,
    s: f64,
    phi: &dyn Fn(&[f64]) -> f64,
    options: &LionsOptions,
) -> Result<LionsDerivativeEstimate> {
    let k = oracle.config.grid_index(s)?;
    let table = lions_derivative_table(oracle, coeffs, mu, &[z_index], j, &[phi], options)?;
    Ok(LionsDerivativeEstimate {
        z: mu.particle(z_index).to_vec(),
        z_index,
        coordinate: j,
        s,
        value: table.mean[0][0][k],
        epsilon: options.epsilon,
        n_particles: mu.len(),
        replicates: options.replicates,
        stderr: table.stderr[0][0][k],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_interpolates_linearly() {
        let f = ScalarFlow::new(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 6.0], vec![1.0, 1.0, 0.0]).unwrap();
        assert_eq!(f.at(0.5), (1.0, 1.0));
        assert_eq!(f.at(2.0), (4.0, 0.5));
        assert_eq!(f.at(3.0), (6.0, 0.0));
        assert!(f.covers(0.0, 3.0).is_ok());
        assert!(f.covers(0.0, 3.1).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mu = EmpiricalMeasure::new(2, vec![0.1, -2.5e-7, 1.0 / 3.0, 12345.678]).unwrap();
        let mut buf = Vec::new();
        mu.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("x0,x1\n"));
        let back = EmpiricalMeasure::read_csv(&buf[..]).unwrap();
        assert_eq!(back, mu);
    }

    #[test]
    fn non_finite_particle_is_named() {
        assert!(matches!(
            EmpiricalMeasure::from_scalars(vec![0.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        let mu = EmpiricalMeasure::from_scalars(vec![1.0, 0.0, 2.0]).unwrap();
        assert!(matches!(moment(&mu, |x| 1.0 / x[0]), Err(Error::NonFinite { index: 1 })));
    }
}
