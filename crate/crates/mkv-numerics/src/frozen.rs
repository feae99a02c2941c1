//! The frozen process: coefficients evaluated at a fixed point xi, which makes
//! the transition law Gaussian with
//!
//! ```text
//! m = int_{s'}^{s} b(r, xi, w1(r)) dr,   a = int_{s'}^{s} sigma sigma^T(r, xi, w2(r)) dr
//! ```
//!
//! Derivatives are taken in the backward variable y'.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::ScalarFlow;
use crate::model::CoefficientSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenParams {
    /// Mean shift, length d.
    pub m: Vec<f64>,
    /// Covariance, d x d row-major.
    pub a: Vec<f64>,
    pub s_prime: f64,
    pub s: f64,
}

impl FrozenParams {
    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// Scalar parameters (m, a) for d = 1.
    pub fn scalar(&self) -> Result<(f64, f64)> {
        if self.dim() != 1 {
            return Err(Error::Unsupported("derivatives of the frozen density are d = 1 only".into()));
        }
        Ok((self.m[0], self.a[0]))
    }
}

/// Trapezoid nodes of the flow grid restricted to [s', s], endpoints included.
pub(crate) fn quadrature_nodes(flow: &ScalarFlow, s_prime: f64, s: f64) -> Vec<f64> {
    let mut nodes = vec![s_prime];
    nodes.extend(flow.times().iter().copied().filter(|&r| r > s_prime && r < s));
    nodes.push(s);
    nodes
}

fn check_interval(flow: &ScalarFlow, s_prime: f64, s: f64) -> Result<()> {
    if !(s > s_prime) {
        return Err(Error::TimeOrder { t: s_prime, s });
    }
    flow.covers(s_prime, s)
}

/// Mean shift and covariance of the frozen process on [s', s].
pub fn frozen_moments(
    coeffs: &CoefficientSet,
    flow: &ScalarFlow,
    xi: &[f64],
    s_prime: f64,
    s: f64,
) -> Result<FrozenParams> {
    let d = coeffs.dim();
    if xi.len() != d {
        return Err(Error::Config("freezing point has the wrong dimension".into()));
    }
    check_interval(flow, s_prime, s)?;
    let nodes = quadrature_nodes(flow, s_prime, s);
    let mut m = vec![0.0; d];
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    let mut am = vec![0.0; d * d];
    let mut prev_b = vec![0.0; d];
    let mut prev_a = vec![0.0; d * d];
    for (n, &r) in nodes.iter().enumerate() {
        let (w1, w2) = flow.at(r);
        coeffs.drift(r, xi, w1, &mut b);
        coeffs.diffusion_matrix(r, xi, w2, &mut am);
        if n > 0 {
            let half = 0.5 * (r - nodes[n - 1]);
            for i in 0..d {
                m[i] += half * (b[i] + prev_b[i]);
            }
            for i in 0..d * d {
                a[i] += half * (am[i] + prev_a[i]);
            }
        }
        prev_b.copy_from_slice(&b);
        prev_a.copy_from_slice(&am);
    }
    Ok(FrozenParams { m, a, s_prime, s })
}

/// Gaussian transition density of the frozen process from y' to y.
pub fn frozen_density(params: &FrozenParams, y_prime: &[f64], y: &[f64]) -> Result<f64> {
    let d = params.dim();
    if y_prime.len() != d || y.len() != d {
        return Err(Error::Config("point dimension does not match the frozen parameters".into()));
    }
    if d == 1 {
        let (m, a) = params.scalar()?;
        if !(a > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        return Ok(gaussian(y[0] - y_prime[0] - m, a));
    }
    let amat = DMatrix::from_row_slice(d, d, &params.a);
    if (0..d).any(|i| (0..d).any(|j| (amat[(i, j)] - amat[(j, i)]).abs() > 1e-12 * amat.amax())) {
        return Err(Error::NotPositiveDefinite);
    }
    let chol = amat.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let z = DVector::from_iterator(d, (0..d).map(|i| y[i] - y_prime[i] - params.m[i]));
    let sol = chol.l().solve_lower_triangular(&z).ok_or(Error::NotPositiveDefinite)?;
    let det_sqrt: f64 = chol.l().diagonal().iter().product();
    let q = sol.norm_squared();
    Ok((2.0 * std::f64::consts::PI).powf(-0.5 * d as f64) / det_sqrt * (-0.5 * q).exp())
}

/// Centered 1-d normal density with variance `a` at `z`.
#[inline]
pub fn gaussian(z: f64, a: f64) -> f64 {
    (-0.5 * z * z / a).exp() / (2.0 * std::f64::consts::PI * a).sqrt()
}

/// d/dy' of the frozen density: ((y - y' - m)/a) p.
pub fn frozen_density_dx(params: &FrozenParams, y_prime: f64, y: f64) -> Result<f64> {
    let (m, a) = params.scalar()?;
    let z = y - y_prime - m;
    Ok(z / a * gaussian(z, a))
}

/// d^2/dy'^2 of the frozen density: ((y - y' - m)^2/a^2 - 1/a) p.
pub fn frozen_density_dx2(params: &FrozenParams, y_prime: f64, y: f64) -> Result<f64> {
    let (m, a) = params.scalar()?;
    let z = y - y_prime - m;
    Ok((z * z / (a * a) - 1.0 / a) * gaussian(z, a))
}

/// The Gaussian-like kernel c (s-t)^{-d/2} exp(-c |y-x|^2 / (s-t)).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMajorant {
    pub c: f64,
}

impl GaussianMajorant {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("majorant constant {c} must be positive")));
        }
        Ok(GaussianMajorant { c })
    }
}

pub fn majorant(kern: &GaussianMajorant, t: f64, x: &[f64], s: f64, y: &[f64]) -> f64 {
    let tau = s - t;
    let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    kern.c * tau.powf(-0.5 * x.len() as f64) * (-kern.c * r2 / tau).exp()
}

/// d = 1 shortcut of [`majorant`].
#[inline]
pub fn majorant_1d(c: f64, tau: f64, dist: f64) -> f64 {
    c / tau.sqrt() * (-c * dist * dist / tau).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrozenCoefficient {
    Drift,
    Diffusion,
}

/// Chain rule for the measure derivative of the frozen mean (or covariance):
/// the trapezoid sum of d_w b(r, xi, w1(r)) D(r) (or d_w a) over [s', s],
/// with D given on the flow grid. d = 1.
///
/// A non-finite D at the left node s' is treated as a power singularity:
/// the first subinterval is integrated exactly for the power law fitted
/// through the next two nodes.
pub fn frozen_mu_moment_derivative(
    coeffs: &CoefficientSet,
    flow: &ScalarFlow,
    flow_derivative: &[f64],
    which: FrozenCoefficient,
    xi: f64,
    s_prime: f64,
    s: f64,
) -> Result<f64> {
    coeffs.require_scalar()?;
    if flow_derivative.len() != flow.times().len() {
        return Err(Error::GridMismatch { expected: flow.times().len(), got: flow_derivative.len() });
    }
    check_interval(flow, s_prime, s)?;
    let times = flow.times();
    let deriv_at = |r: f64| -> f64 {
        if let Ok(k) = times.binary_search_by(|v| v.total_cmp(&r)) {
            return flow_derivative[k];
        }
        let (k, th) = flow.locate(r);
        (1.0 - th) * flow_derivative[k] + th * flow_derivative[k + 1]
    };
    let chain = |r: f64| -> f64 {
        let (w1, w2) = flow.at(r);
        let mut out = [0.0];
        match which {
            FrozenCoefficient::Drift => {
                coeffs.drift_dw(r, &[xi], w1, &mut out);
                out[0]
            }
            FrozenCoefficient::Diffusion => {
                coeffs.diffusion_dw(r, &[xi], w2, &mut out);
                2.0 * coeffs.sigma1(r, xi, w2) * out[0]
            }
        }
    };
    let nodes = quadrature_nodes(flow, s_prime, s);
    let f: Vec<f64> = nodes.iter().map(|&r| chain(r) * deriv_at(r)).collect();
    let mut total = 0.0;
    let mut start = 0;
    if !f[0].is_finite() {
        if nodes.len() < 3 || !f[1].is_finite() || !f[2].is_finite() || f[1] == 0.0 || f[1].signum() != f[2].signum() {
            return Err(Error::Resolution("cannot resolve the endpoint singularity".into()));
        }
        let (r0, r1, r2) = (nodes[0], nodes[1], nodes[2]);
        let beta = -(f[2] / f[1]).ln() / ((r2 - r0) / (r1 - r0)).ln();
        if beta >= 1.0 {
            return Err(Error::Resolution(format!("endpoint singularity of order {beta} is not integrable")));
        }
        total += f[1] * (r1 - r0) / (1.0 - beta);
        start = 1;
    }
    for n in start + 1..nodes.len() {
        total += 0.5 * (nodes[n] - nodes[n - 1]) * (f[n] + f[n - 1]);
    }
    Ok(total)
}
