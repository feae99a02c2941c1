//! Graded time rules, uniform spatial grids and local interpolation.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

/// Double-graded map of [0, 1] onto itself: x^p clustering at both ends.
#[inline]
pub fn graded(x: f64, p: f64) -> f64 {
    if x <= 0.5 {
        0.5 * (2.0 * x).powf(p)
    } else {
        1.0 - 0.5 * (2.0 * (1.0 - x)).powf(p)
    }
}

#[inline]
fn graded_slope(x: f64, p: f64) -> f64 {
    let y = if x <= 0.5 { 2.0 * x } else { 2.0 * (1.0 - x) };
    p * y.powf(p - 1.0)
}

/// `n + 1` levels on [0, 1] clustered at both ends with exponent p.
pub fn graded_levels(n: usize, p: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..=n).map(|j| graded(j as f64 / n as f64, p)).collect();
    v[0] = 0.0;
    v[n] = 1.0;
    v
}

/// Open rule on (0, 1): Gauss–Legendre on each half of the graded map, so an
/// integrand behaving like r^{1/p - 1} (1 - r)^{1/p - 1} is integrated as a
/// smooth function.
#[derive(Clone, Debug)]
pub struct GradedRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GradedRule {
    pub fn new(n_half: usize, p: f64) -> GradedRule {
        let gl = GaussLegendre::new(NonZeroUsize::new(n_half.max(1)).unwrap());
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(2 * n_half);
        for (xi, w) in gl.into_iter() {
            // xi in (-1, 1) -> x in (0, 1/2) and its mirror
            let x = 0.25 * (xi + 1.0);
            let wx = 0.25 * w;
            pairs.push((graded(x, p), graded_slope(x, p) * wx));
            pairs.push((graded(1.0 - x, p), graded_slope(1.0 - x, p) * wx));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        GradedRule { nodes: pairs.iter().map(|p| p.0).collect(), weights: pairs.iter().map(|p| p.1).collect() }
    }

    /// Nodes and weights mapped to (a, b).
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let len = b - a;
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| (a + len * x, len * w))
    }
}

/// Uniform grid x0, x0 + h, ..., x0 + (n - 1) h.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformGrid {
    pub x0: f64,
    pub h: f64,
    pub n: usize,
}

impl UniformGrid {
    #[inline]
    pub fn point(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.h
    }

    pub fn end(&self) -> f64 {
        self.point(self.n - 1)
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    /// Index range of grid points inside [lo, hi].
    pub fn range(&self, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let a = ((lo - self.x0) / self.h).ceil().max(0.0);
        let b = ((hi - self.x0) / self.h).floor().min(self.n as f64 - 1.0);
        if a > b {
            None
        } else {
            Some((a as usize, b as usize))
        }
    }

    /// Four-point Lagrange interpolation of grid values; zero outside the grid.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let s = (x - self.x0) / self.h;
        if s < 0.0 || s > (self.n - 1) as f64 {
            return 0.0;
        }
        if self.n < 4 {
            let i = (s.floor() as usize).min(self.n - 2);
            let th = s - i as f64;
            return (1.0 - th) * values[i] + th * values[i + 1];
        }
        let i = (s.floor() as usize).clamp(1, self.n - 3);
        let w = lagrange4(s - i as f64);
        w[0] * values[i - 1] + w[1] * values[i] + w[2] * values[i + 1] + w[3] * values[i + 2]
    }
}

/// Weights of the cubic through nodes -1, 0, 1, 2 evaluated at t.
#[inline]
pub fn lagrange4(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// Locates r among increasing levels: (l, theta) with r between levels l and l+1.
pub fn bracket(levels: &[f64], r: f64) -> (usize, f64) {
    let n = levels.len();
    if r <= levels[0] {
        return (0, 0.0);
    }
    if r >= levels[n - 1] {
        return (n - 2, 1.0);
    }
    let l = levels.partition_point(|&v| v <= r) - 1;
    (l, (r - levels[l]) / (levels[l + 1] - levels[l]))
}
