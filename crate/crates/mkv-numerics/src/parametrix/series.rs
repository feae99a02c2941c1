//! Truncated parametrix series p = sum_k p~ (x) H^{(x)k}, computed forward in
//! time: G_0(r, u) = p~^u(t, x; r, u) and
//!
//! ```text
//! G_k(r, y) = int_t^r int G_{k-1}(rho, u) H(rho, u; r, y) du drho,
//! ```
//!
//! so that G_k(s, y) is the order-k term of p(t, x; s, y).

use serde::{Deserialize, Serialize};

use super::bounds::{fit_kernel, series_tail, KernelFit};
use super::kernel::{coefficients_at, frozen_direct, h_value, kernel_h, FrozenTable};
use super::quadrature::{bracket, graded_levels, GradedRule, UniformGrid};
use crate::error::{Error, Result};
use crate::frozen::gaussian;
use crate::measure::ScalarFlow;
use crate::model::{CoefficientSet, RegularityProfile};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParametrixConfig {
    /// Truncation order K.
    pub order: usize,
    /// Number of time intervals between t and s.
    pub time_levels: usize,
    /// Gauss–Legendre nodes on each half of an inner time integral.
    pub inner_nodes: usize,
    /// Spatial half-width in standard deviations sqrt(Lambda (s - t)).
    pub extent: f64,
    /// Spatial grid points per standard deviation.
    pub points_per_sd: f64,
    /// Lattice refinement of the spatial grid used for inner integrals.
    pub refine: usize,
    /// Time grading exponent; 2/gamma_a when absent.
    pub grading: Option<f64>,
}

impl Default for ParametrixConfig {
    fn default() -> Self {
        ParametrixConfig {
            order: 3,
            time_levels: 64,
            inner_nodes: 16,
            extent: 8.0,
            points_per_sd: 40.0,
            refine: 4,
            grading: None,
        }
    }
}

impl ParametrixConfig {
    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("parametrix: {m}")));
        if self.time_levels < 2 {
            return bad("time_levels must be at least 2");
        }
        if self.inner_nodes == 0 {
            return bad("inner_nodes must be positive");
        }
        if !(self.extent > 0.0 && self.points_per_sd >= 1.0) {
            return bad("extent and points_per_sd must be positive");
        }
        if self.refine == 0 {
            return bad("refine must be positive");
        }
        if let Some(p) = self.grading {
            if !(1.0..=16.0).contains(&p) {
                return bad("grading must lie in [1, 16]");
            }
        }
        Ok(())
    }

    pub fn grading_for(&self, profile: &RegularityProfile) -> f64 {
        self.grading.unwrap_or((2.0 / profile.gamma_a).clamp(1.0, 8.0))
    }
}

/// Time levels graded toward both ends of [t, s] and a uniform spatial grid of
/// half-width extent * sqrt(Lambda (s - t)) around a center.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeGrid {
    pub t: f64,
    pub s: f64,
    pub levels: Vec<f64>,
    pub space: UniformGrid,
}

impl SpaceTimeGrid {
    pub fn new(profile: &RegularityProfile, t: f64, center: f64, s: f64, config: &ParametrixConfig) -> Result<Self> {
        config.validate()?;
        if !(s > t) {
            return Err(Error::TimeOrder { t, s });
        }
        let sd = (profile.lambda * (s - t)).sqrt();
        let h = sd / config.points_per_sd;
        let nh = (config.extent * config.points_per_sd).ceil() as usize;
        let space = UniformGrid { x0: center - nh as f64 * h, h, n: 2 * nh + 1 };
        let p = config.grading_for(profile);
        let mut levels: Vec<f64> = graded_levels(config.time_levels, p).iter().map(|v| t + (s - t) * v).collect();
        levels[0] = t;
        *levels.last_mut().unwrap() = s;
        Ok(SpaceTimeGrid { t, s, levels, space })
    }

    pub fn center(&self) -> f64 {
        self.space.point((self.space.n - 1) / 2)
    }

    pub fn lattice(&self, refine: usize) -> UniformGrid {
        UniformGrid { x0: self.space.x0, h: self.space.h / refine as f64, n: (self.space.n - 1) * refine + 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesResult {
    pub value: f64,
    pub per_order: Vec<f64>,
    pub tail_bound: f64,
    #[serde(rename = "K")]
    pub order: usize,
}

/// Series terms G_k on a space-time grid.
#[derive(Clone, Debug)]
pub struct SeriesTable {
    pub x: f64,
    pub grid: SpaceTimeGrid,
    /// [k][level][i]; empty where a level was not computed, and at level 0.
    pub orders: Vec<Vec<Vec<f64>>>,
}

impl SeriesTable {
    pub fn order(&self) -> usize {
        self.orders.len() - 1
    }

    pub fn term(&self, k: usize, level: usize) -> Option<&[f64]> {
        self.orders.get(k)?.get(level).filter(|v| !v.is_empty()).map(|v| v.as_slice())
    }

    /// Sum of the computed terms at a level.
    pub fn density(&self, level: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.space.n];
        for k in 0..=self.order() {
            if let Some(v) = self.term(k, level) {
                out.iter_mut().zip(v).for_each(|(o, g)| *o += g);
            }
        }
        out
    }

    /// Trapezoid integral over the grid of the density at a level.
    pub fn mass(&self, level: usize) -> f64 {
        let d = self.density(level);
        let n = d.len();
        self.grid.space.h * (d.iter().sum::<f64>() - 0.5 * (d[0] + d[n - 1]))
    }
}

struct Window {
    grid: UniformGrid,
    g: Vec<f64>,
    b: Vec<f64>,
    a: Vec<f64>,
}

struct Solver<'a> {
    coeffs: &'a CoefficientSet,
    flow: &'a ScalarFlow,
    x: f64,
    grid: SpaceTimeGrid,
    lattice: UniformGrid,
    refine: usize,
    extent: f64,
    lambda: f64,
    table: FrozenTable,
    rule: GradedRule,
    /// Coefficients on the grid at each level.
    level_coeffs: Vec<Vec<(f64, f64)>>,
    spread: f64,
}

fn all_equal(v: &[(f64, f64)]) -> bool {
    v.iter().all(|c| c.0 == v[0].0 && c.1 == v[0].1)
}

impl<'a> Solver<'a> {
    fn new(coeffs: &'a CoefficientSet, flow: &'a ScalarFlow, t: f64, x: f64, s: f64, config: &ParametrixConfig) -> Result<Self> {
        coeffs.require_scalar()?;
        flow.covers(t, s)?;
        let profile = coeffs.profile();
        let grid = SpaceTimeGrid::new(profile, t, x, s, config)?;
        let lattice = grid.lattice(config.refine);
        let table = FrozenTable::new(coeffs, flow, t, s, &lattice.points())?;
        let points = grid.space.points();
        let level_coeffs: Vec<Vec<(f64, f64)>> = grid
            .levels
            .iter()
            .map(|&r| {
                let w = flow.at(r);
                points.iter().map(|&y| coefficients_at(coeffs, r, y, w)).collect()
            })
            .collect();
        let spread = level_coeffs
            .iter()
            .map(|v| {
                let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, c| (acc.0.min(c.0), acc.1.max(c.0)));
                hi - lo
            })
            .fold(0.0, f64::max);
        let rule = GradedRule::new(config.inner_nodes, config.grading_for(profile));
        Ok(Solver {
            coeffs,
            flow,
            x,
            grid,
            lattice,
            refine: config.refine,
            extent: config.extent,
            lambda: profile.lambda,
            table,
            rule,
            level_coeffs,
            spread,
        })
    }

    fn t(&self) -> f64 {
        self.grid.t
    }

    fn order_zero(&self, j: usize) -> Vec<f64> {
        let span = self.table.span(self.t(), self.grid.levels[j]);
        (0..self.grid.space.n)
            .map(|i| {
                let l = i * self.refine;
                let (m, a) = self.table.integrate(l, &span, self.table.initial(l), self.level_coeffs[j][i]);
                gaussian(self.grid.space.point(i) - self.x - m, a)
            })
            .collect()
    }

    /// Values of G_{k-1}(rho, .) with the coefficients at rho, on a window
    /// around the center of its mass.
    fn window(&self, k: usize, rho: f64, w: (f64, f64), coef: &[(f64, f64)], prev: &[Vec<f64>]) -> Option<Window> {
        let t = self.t();
        let tau = rho - t;
        let sd_lo = (tau / self.lambda).sqrt();
        let ix = (self.grid.space.n - 1) / 2;
        let lx = ix * self.refine;
        let (mx, _) = self.table.integrate(lx, &self.table.span(t, rho), self.table.initial(lx), coef[ix]);
        let widen = if k == 1 { 1.0 } else { 2.0 };
        let half = self.extent * (widen * self.lambda * tau).sqrt() + self.spread * tau;
        let c = self.x + mx;
        let lo = (c - half).max(self.grid.space.x0);
        let hi = (c + half).min(self.grid.space.end());
        if lo >= hi {
            return None;
        }
        let blended = if k > 1 {
            let (lv, th) = bracket(&self.grid.levels, rho);
            let (p0, p1) = (&prev[lv], &prev[lv + 1]);
            let z = |v: &Vec<f64>, i: usize| if v.is_empty() { 0.0 } else { v[i] };
            Some((0..self.grid.space.n).map(|i| (1.0 - th) * z(p0, i) + th * z(p1, i)).collect::<Vec<f64>>())
        } else {
            None
        };
        let later = |u: f64| blended.as_ref().map(|b| self.grid.space.interpolate(b, u));
        if sd_lo / 3.0 >= self.lattice.h {
            let (l0, l1) = self.lattice.range(lo, hi)?;
            let n = l1 - l0 + 1;
            let wgrid = UniformGrid { x0: self.lattice.point(l0), h: self.lattice.h, n };
            let span0 = self.table.span(t, rho);
            let (mut g, mut b, mut a) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
            for l in l0..=l1 {
                let u = self.lattice.point(l);
                let cu = if l % self.refine == 0 { coef[l / self.refine] } else { coefficients_at(self.coeffs, rho, u, w) };
                b.push(cu.0);
                a.push(cu.1);
                g.push(later(u).unwrap_or_else(|| {
                    let (m, v) = self.table.integrate(l, &span0, self.table.initial(l), cu);
                    gaussian(u - self.x - m, v)
                }));
            }
            Some(Window { grid: wgrid, g, b, a })
        } else {
            let h = sd_lo / 3.0;
            let n = ((hi - lo) / h).floor() as usize + 1;
            let wgrid = UniformGrid { x0: lo, h, n };
            let (mut g, mut b, mut a) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
            for p in 0..n {
                let u = wgrid.point(p);
                let cu = coefficients_at(self.coeffs, rho, u, w);
                b.push(cu.0);
                a.push(cu.1);
                g.push(later(u).unwrap_or_else(|| {
                    let (m, v) = frozen_direct(self.coeffs, self.flow, u, t, rho, None, Some(cu));
                    gaussian(u - self.x - m, v)
                }));
            }
            Some(Window { grid: wgrid, g, b, a })
        }
    }

    fn level(&self, k: usize, j: usize, prev: &[Vec<f64>]) -> Result<Vec<f64>> {
        let space = self.grid.space;
        let rj = self.grid.levels[j];
        let mut out = vec![0.0; space.n];
        let points = space.points();
        for (rho, wq) in self.rule.mapped(self.t(), rj) {
            let w = self.flow.at(rho);
            let coef: Vec<(f64, f64)> = points.iter().map(|&y| coefficients_at(self.coeffs, rho, y, w)).collect();
            if all_equal(&coef) {
                // space-homogeneous at rho: H vanishes
                continue;
            }
            let Some(win) = self.window(k, rho, w, &coef, prev) else { continue };
            let (glo, ghi) = (win.grid.x0, win.grid.end());
            let sd_lo = ((rho - self.t()) / self.lambda).sqrt();
            let span = self.table.span(rho, rj);
            for i in 0..space.n {
                let (m, a) = self.table.integrate(i * self.refine, &span, coef[i], self.level_coeffs[j][i]);
                if !(a > 0.0) {
                    return Err(Error::NotPositiveDefinite);
                }
                let sdh = a.sqrt();
                let y = points[i];
                let ch = y - m;
                let lo = glo.max(ch - self.extent * sdh);
                let hi = ghi.min(ch + self.extent * sdh);
                if lo >= hi {
                    continue;
                }
                let (bi, ai) = coef[i];
                let spacing = sd_lo.min(sdh) / 3.0;
                let mut sum = 0.0;
                if spacing >= win.grid.h {
                    let stride = (spacing / win.grid.h).floor() as usize;
                    let Some((p0, p1)) = win.grid.range(lo, hi) else { continue };
                    let mut p = p0;
                    while p <= p1 {
                        let u = win.grid.point(p);
                        sum += win.g[p] * h_value(win.b[p] - bi, win.a[p] - ai, y - u - m, a);
                        p += stride;
                    }
                    sum *= stride as f64 * win.grid.h;
                } else {
                    let n = ((hi - lo) / spacing).ceil().max(1.0) as usize;
                    let du = (hi - lo) / n as f64;
                    for p in 0..=n {
                        let u = lo + p as f64 * du;
                        let g = win.grid.interpolate(&win.g, u);
                        if g == 0.0 {
                            continue;
                        }
                        let (bu, au) = coefficients_at(self.coeffs, rho, u, w);
                        let wt = if p == 0 || p == n { 0.5 } else { 1.0 };
                        sum += wt * g * h_value(bu - bi, au - ai, y - u - m, a);
                    }
                    sum *= du;
                }
                out[i] += wq * sum;
            }
        }
        Ok(out)
    }
}

/// Series terms up to `config.order`. The last order is computed at every level
/// only when `all_levels` is set; otherwise just at s.
pub fn series_table(
    coeffs: &CoefficientSet,
    flow: &ScalarFlow,
    t: f64,
    x: f64,
    s: f64,
    config: &ParametrixConfig,
    all_levels: bool,
) -> Result<SeriesTable> {
    let solver = Solver::new(coeffs, flow, t, x, s, config)?;
    let nl = solver.grid.levels.len();
    let mut orders: Vec<Vec<Vec<f64>>> = Vec::with_capacity(config.order + 1);
    let mut zero = vec![Vec::new(); nl];
    for (j, slot) in zero.iter_mut().enumerate().skip(1) {
        *slot = solver.order_zero(j);
    }
    orders.push(zero);
    for k in 1..=config.order {
        let mut layer = vec![Vec::new(); nl];
        let first = if k == config.order && !all_levels { nl - 1 } else { 1 };
        for (j, slot) in layer.iter_mut().enumerate().skip(first) {
            *slot = solver.level(k, j, &orders[k - 1])?;
        }
        orders.push(layer);
    }
    Ok(SeriesTable { x, grid: solver.grid, orders })
}

/// Samples (s - s', |y - y'|, |H(s', y'; s, y)|) over a coarse subset of a grid.
pub fn sample_kernel(coeffs: &CoefficientSet, flow: &ScalarFlow, grid: &SpaceTimeGrid) -> Result<Vec<(f64, f64, f64)>> {
    let nl = grid.levels.len();
    let tstep = (nl / 8).max(1);
    let ystep = (grid.space.n / 16).max(1);
    let mut out = Vec::new();
    for j in (0..nl - 1).step_by(tstep) {
        let sp = grid.levels[j];
        for jj in ((j + tstep).min(nl - 1)..nl).step_by(tstep).chain(std::iter::once(nl - 1)) {
            let s = grid.levels[jj];
            if !(s > sp) {
                continue;
            }
            let sd = (s - sp).sqrt();
            for i in (0..grid.space.n).step_by(ystep) {
                let yp = grid.space.point(i);
                for q in -12..=12 {
                    let d = 0.5 * q as f64 * sd;
                    let v = kernel_h(coeffs, flow, sp, yp, s, yp + d)?;
                    out.push((s - sp, d.abs(), v.abs()));
                }
            }
        }
    }
    Ok(out)
}

/// Kernel constants for the tail estimate of a solve on [t, s] around x.
pub fn fit_for_interval(coeffs: &CoefficientSet, flow: &ScalarFlow, t: f64, x: f64, s: f64, config: &ParametrixConfig) -> Result<KernelFit> {
    let mut coarse = config.clone();
    coarse.time_levels = 16;
    coarse.points_per_sd = 4.0;
    let grid = SpaceTimeGrid::new(coeffs.profile(), t, x, s, &coarse)?;
    let samples = sample_kernel(coeffs, flow, &grid)?;
    Ok(fit_kernel(&samples, coeffs.profile().gamma_a, coeffs.profile().lambda))
}

/// Series values at each y, from one solve on the grid around x.
pub fn parametrix_density_grid(
    coeffs: &CoefficientSet,
    flow: &ScalarFlow,
    t: f64,
    x: f64,
    s: f64,
    ys: &[f64],
    config: &ParametrixConfig,
) -> Result<Vec<SeriesResult>> {
    let table = series_table(coeffs, flow, t, x, s, config, false)?;
    let fit = fit_for_interval(coeffs, flow, t, x, s, config)?;
    let last = table.grid.levels.len() - 1;
    ys.iter()
        .map(|&y| {
            let (m, a) = frozen_direct(coeffs, flow, y, t, s, None, None);
            if !(a > 0.0) {
                return Err(Error::NotPositiveDefinite);
            }
            let mut per_order = vec![gaussian(y - x - m, a)];
            for k in 1..=config.order {
                per_order.push(table.term(k, last).map_or(0.0, |v| table.grid.space.interpolate(v, y)));
            }
            Ok(SeriesResult {
                value: per_order.iter().sum(),
                per_order,
                tail_bound: series_tail(&fit, config.order, s - t, y - x, coeffs.profile().lambda),
                order: config.order,
            })
        })
        .collect()
}

pub fn parametrix_density_with(
    coeffs: &CoefficientSet,
    flow: &ScalarFlow,
    t: f64,
    x: f64,
    s: f64,
    y: f64,
    config: &ParametrixConfig,
) -> Result<SeriesResult> {
    Ok(parametrix_density_grid(coeffs, flow, t, x, s, &[y], config)?.remove(0))
}

/// Truncated series of order `order` at (s, y) with default resolution.
pub fn parametrix_density(
    coeffs: &CoefficientSet,
    flow: &ScalarFlow,
    t: f64,
    x: f64,
    s: f64,
    y: f64,
    order: usize,
) -> Result<SeriesResult> {
    parametrix_density_with(coeffs, flow, t, x, s, y, &ParametrixConfig::default().with_order(order))
}
