//! The smoothing kernel H and cached frozen integrals used by the series solvers.

use crate::error::{Error, Result};
use crate::frozen::{frozen_moments, gaussian, quadrature_nodes};
use crate::measure::ScalarFlow;
use crate::model::CoefficientSet;

/// H from the coefficient differences and the frozen parameters:
/// db d_{y'} p + da/2 d^2_{y'} p with p the normal density of variance `a` at z.
#[inline]
pub(crate) fn h_value(db: f64, da: f64, z: f64, a: f64) -> f64 {
    let g = gaussian(z, a);
    let q = z / a;
    g * (db * q + 0.5 * da * (q * q - 1.0 / a))
}

/// H(s', y'; s, y) = (b(s', y') - b(s', y)) d_{y'} p~ + 1/2 (a(s', y') - a(s', y)) d^2_{y'} p~,
/// with p~ the frozen density at xi = y on [s', s] and derivatives in the backward
/// variable y'. This is the sign for which p = p~ + p (x) H.
pub fn kernel_h(coeffs: &CoefficientSet, flow: &ScalarFlow, s_prime: f64, y_prime: f64, s: f64, y: f64) -> Result<f64> {
    coeffs.require_scalar()?;
    let params = frozen_moments(coeffs, flow, &[y], s_prime, s)?;
    let (m, a) = params.scalar()?;
    if !(a > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    let (w1, w2) = flow.at(s_prime);
    let db = coeffs.b1(s_prime, y_prime, w1) - coeffs.b1(s_prime, y, w1);
    let da = coeffs.a1(s_prime, y_prime, w2) - coeffs.a1(s_prime, y, w2);
    Ok(h_value(db, da, y - y_prime - m, a))
}

/// Drift and diffusion at (r, x) under the flow.
#[inline]
pub(crate) fn coefficients_at(coeffs: &CoefficientSet, r: f64, x: f64, w: (f64, f64)) -> (f64, f64) {
    (coeffs.b1(r, x, w.0), coeffs.a1(r, x, w.1))
}

/// Integration interval [r1, r2] located among the table nodes.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Span {
    r1: f64,
    r2: f64,
    /// First node strictly after r1 and last node strictly before r2; `None` when
    /// no node lies strictly inside.
    inner: Option<(usize, usize)>,
}

/// Cumulative trapezoid integrals of b and a, frozen at each of a set of points,
/// on the flow nodes of [t, s]. Any sub-interval integral agrees with
/// `frozen_moments` up to rounding.
pub(crate) struct FrozenTable {
    nodes: Vec<f64>,
    nn: usize,
    fb: Vec<f64>,
    fa: Vec<f64>,
    cb: Vec<f64>,
    ca: Vec<f64>,
}

impl FrozenTable {
    pub(crate) fn new(coeffs: &CoefficientSet, flow: &ScalarFlow, t: f64, s: f64, points: &[f64]) -> Result<FrozenTable> {
        flow.covers(t, s)?;
        let nodes = quadrature_nodes(flow, t, s);
        let nn = nodes.len();
        let ws: Vec<(f64, f64)> = nodes.iter().map(|&r| flow.at(r)).collect();
        let size = nn * points.len();
        let (mut fb, mut fa, mut cb, mut ca) = (vec![0.0; size], vec![0.0; size], vec![0.0; size], vec![0.0; size]);
        for (l, &xi) in points.iter().enumerate() {
            let base = l * nn;
            for n in 0..nn {
                let (b, a) = coefficients_at(coeffs, nodes[n], xi, ws[n]);
                fb[base + n] = b;
                fa[base + n] = a;
                if n > 0 {
                    let half = 0.5 * (nodes[n] - nodes[n - 1]);
                    cb[base + n] = cb[base + n - 1] + half * (b + fb[base + n - 1]);
                    ca[base + n] = ca[base + n - 1] + half * (a + fa[base + n - 1]);
                }
            }
        }
        Ok(FrozenTable { nodes, nn, fb, fa, cb, ca })
    }

    /// Integrand values at the first node for point l.
    pub(crate) fn initial(&self, l: usize) -> (f64, f64) {
        (self.fb[l * self.nn], self.fa[l * self.nn])
    }

    pub(crate) fn span(&self, r1: f64, r2: f64) -> Span {
        let n1 = self.nodes.partition_point(|&v| v <= r1);
        let n2 = self.nodes.partition_point(|&v| v < r2);
        let inner = if n2 == 0 || n1 > n2 - 1 { None } else { Some((n1, n2 - 1)) };
        Span { r1, r2, inner }
    }

    /// (int b, int a) over the span for point l, given the integrands at its ends.
    #[inline]
    pub(crate) fn integrate(&self, l: usize, span: &Span, f1: (f64, f64), f2: (f64, f64)) -> (f64, f64) {
        match span.inner {
            None => {
                let half = 0.5 * (span.r2 - span.r1);
                (half * (f1.0 + f2.0), half * (f1.1 + f2.1))
            }
            Some((n1, n2)) => {
                let base = l * self.nn;
                let (a1, a2) = (base + n1, base + n2);
                let left = 0.5 * (self.nodes[n1] - span.r1);
                let right = 0.5 * (span.r2 - self.nodes[n2]);
                (
                    left * (f1.0 + self.fb[a1]) + (self.cb[a2] - self.cb[a1]) + right * (self.fb[a2] + f2.0),
                    left * (f1.1 + self.fa[a1]) + (self.ca[a2] - self.ca[a1]) + right * (self.fa[a2] + f2.1),
                )
            }
        }
    }
}

/// (int b, int a) frozen at an arbitrary point, by direct trapezoid on [r1, r2];
/// `f1` is the integrand at r1 when already known.
pub(crate) fn frozen_direct(
    coeffs: &CoefficientSet,
    flow: &ScalarFlow,
    xi: f64,
    r1: f64,
    r2: f64,
    f1: Option<(f64, f64)>,
    f2: Option<(f64, f64)>,
) -> (f64, f64) {
    let times = flow.times();
    let mut prev_r = r1;
    let mut prev = f1.unwrap_or_else(|| coefficients_at(coeffs, r1, xi, flow.at(r1)));
    let (mut m, mut a) = (0.0, 0.0);
    let start = times.partition_point(|&v| v <= r1);
    for (k, &r) in times.iter().enumerate().skip(start) {
        if r >= r2 {
            break;
        }
        let cur = coefficients_at(coeffs, r, xi, (flow.w1()[k], flow.w2()[k]));
        m += 0.5 * (r - prev_r) * (prev.0 + cur.0);
        a += 0.5 * (r - prev_r) * (prev.1 + cur.1);
        prev = cur;
        prev_r = r;
    }
    let last = f2.unwrap_or_else(|| coefficients_at(coeffs, r2, xi, flow.at(r2)));
    m += 0.5 * (r2 - prev_r) * (prev.0 + last.0);
    a += 0.5 * (r2 - prev_r) * (prev.1 + last.1);
    (m, a)
}
