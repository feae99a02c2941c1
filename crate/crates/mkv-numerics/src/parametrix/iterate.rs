//! Iterated kernels H^{(x)k}(s', y'; s, y) for a fixed terminal point (s, y),
//! sampled on a space-time grid:
//!
//! ```text
//! H^{(x)(k+1)}(s', y'; s, y) = int_{s'}^{s} int H^{(x)k}(r, u; s, y) H(s', y'; r, u) du dr.
//! ```

use std::io::Write;

use super::kernel::{coefficients_at, frozen_direct, h_value, FrozenTable};
use super::quadrature::{bracket, GradedRule, UniformGrid};
use super::series::{ParametrixConfig, SpaceTimeGrid};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::measure::ScalarFlow;
use crate::model::CoefficientSet;

/// H^{(x)k}(s'_j, y'_i; s, y) at every level j before s and every grid point i.
#[derive(Clone, Debug)]
pub struct KernelTable {
    pub k: usize,
    pub s: f64,
    pub y: f64,
    pub grid: SpaceTimeGrid,
    /// [level][i]; the level at s is empty.
    pub values: Vec<Vec<f64>>,
}

impl KernelTable {
    /// Rows (k, s', y', s, y, value).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k", "s_prime", "y_prime", "s", "y", "value"])?;
        self.append_rows(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub(crate) fn append_rows<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for (j, row) in self.values.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                w.write_record([
                    self.k.to_string(),
                    fmt_f64(self.grid.levels[j]),
                    fmt_f64(self.grid.space.point(i)),
                    fmt_f64(self.s),
                    fmt_f64(self.y),
                    fmt_f64(*v),
                ])?;
            }
        }
        Ok(())
    }

    /// Every sampled node as (s - s', |y - y'|, value).
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.values.iter().enumerate().flat_map(move |(j, row)| {
            let tau = self.s - self.grid.levels[j];
            row.iter().enumerate().map(move |(i, &v)| (tau, (self.y - self.grid.space.point(i)).abs(), v))
        })
    }
}

/// H(s', y'; s, y) on the grid, which must end at s and be centered at y.
pub fn kernel_table(coeffs: &CoefficientSet, flow: &ScalarFlow, grid: &SpaceTimeGrid, y: f64) -> Result<KernelTable> {
    coeffs.require_scalar()?;
    let s = grid.s;
    flow.covers(grid.t, s)?;
    let nl = grid.levels.len();
    let mut values = vec![Vec::new(); nl];
    for (j, row) in values.iter_mut().enumerate().take(nl - 1) {
        let sp = grid.levels[j];
        let w = flow.at(sp);
        let (m, a) = frozen_direct(coeffs, flow, y, sp, s, None, None);
        if !(a > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let cy = coefficients_at(coeffs, sp, y, w);
        *row = (0..grid.space.n)
            .map(|i| {
                let yp = grid.space.point(i);
                let c = coefficients_at(coeffs, sp, yp, w);
                h_value(c.0 - cy.0, c.1 - cy.1, y - yp - m, a)
            })
            .collect();
    }
    Ok(KernelTable { k: 1, s, y, grid: grid.clone(), values })
}

struct Window {
    grid: UniformGrid,
    /// H^{(x)k}(r, u; s, y).
    kern: Vec<f64>,
    /// Coefficients at (s', u).
    level: Vec<(f64, f64)>,
    /// Frozen moments at u on [s', r].
    moments: Vec<(f64, f64)>,
}

struct Iterator_<'a> {
    coeffs: &'a CoefficientSet,
    flow: &'a ScalarFlow,
    prev: &'a KernelTable,
    lattice: UniformGrid,
    refine: usize,
    extent: f64,
    lambda: f64,
    gamma: f64,
    table: FrozenTable,
    rule: GradedRule,
    /// Coarser rule for nested evaluations near s.
    nested: GradedRule,
    level_lattice: Vec<Vec<(f64, f64)>>,
    spread: f64,
}

impl<'a> Iterator_<'a> {
    /// The previous kernel at inner time r, regularized by (s - r)^{1 - k gamma/2}
    /// in time before interpolation.
    fn blended(&self, r: f64) -> Vec<f64> {
        let lv = &self.prev.grid.levels;
        let nl = lv.len();
        let s = self.prev.s;
        let e = 1.0 - self.prev.k as f64 * self.gamma / 2.0;
        let reg = |l: usize| -> Vec<f64> {
            let f = (s - lv[l]).powf(e);
            self.prev.values[l].iter().map(|v| v * f).collect()
        };
        let (l, th) = bracket(lv, r);
        let out: Vec<f64> = if l + 1 >= nl - 1 {
            reg(nl - 2)
        } else {
            let (a, b) = (reg(l), reg(l + 1));
            a.iter().zip(&b).map(|(x, y)| (1.0 - th) * x + th * y).collect()
        };
        let back = (s - r).powf(-e);
        out.into_iter().map(|v| v * back).collect()
    }

    /// H^{(x)k}(r, u; s, y) by nested quadrature, for inner times too close to s
    /// for the grid to resolve the kernel. Cost grows geometrically in k.
    fn point_value(&self, k: usize, r: f64, u: f64) -> f64 {
        let (s, y) = (self.prev.s, self.prev.y);
        let wr = self.flow.at(r);
        let cu = coefficients_at(self.coeffs, r, u, wr);
        if k == 1 {
            let (ms, as_) = frozen_direct(self.coeffs, self.flow, y, r, s, Some(cu), None);
            let cy = coefficients_at(self.coeffs, r, y, wr);
            return h_value(cu.0 - cy.0, cu.1 - cy.1, y - u - ms, as_);
        }
        let mut total = 0.0;
        for (rp, wq) in self.nested.mapped(r, s) {
            let tk = s - rp;
            let tt = rp - r;
            let (ms, _) = frozen_direct(self.coeffs, self.flow, y, rp, s, None, None);
            let (mu, _) = frozen_direct(self.coeffs, self.flow, u, r, rp, Some(cu), None);
            let widen = if k == 2 { 1.0 } else { 2.0 };
            let hk = self.extent * (widen * self.lambda * tk).sqrt() + self.spread * tk;
            let ht = self.extent * (self.lambda * tt).sqrt() + self.spread * tt;
            let lo = (y - ms - hk).max(u + mu - ht);
            let hi = (y - ms + hk).min(u + mu + ht);
            if lo >= hi {
                continue;
            }
            let spacing = (tk / self.lambda).sqrt().min((tt / self.lambda).sqrt()) / 3.0;
            let n = ((hi - lo) / spacing).ceil().max(1.0) as usize;
            let du = (hi - lo) / n as f64;
            let wp = self.flow.at(rp);
            // the order-1 factor shares its frozen moments at y across v
            let first = if k == 2 {
                let (_, as_) = frozen_direct(self.coeffs, self.flow, y, rp, s, None, None);
                Some((as_, coefficients_at(self.coeffs, rp, y, wp)))
            } else {
                None
            };
            let mut sum = 0.0;
            for p in 0..=n {
                let v = lo + p as f64 * du;
                let cl = coefficients_at(self.coeffs, r, v, wr);
                let cv = coefficients_at(self.coeffs, rp, v, wp);
                let kv = match first {
                    Some((as_, cy)) => h_value(cv.0 - cy.0, cv.1 - cy.1, y - v - ms, as_),
                    None => self.point_value(k - 1, rp, v),
                };
                let (m, a) = frozen_direct(self.coeffs, self.flow, v, r, rp, Some(cl), Some(cv));
                let wt = if p == 0 || p == n { 0.5 } else { 1.0 };
                sum += wt * kv * h_value(cu.0 - cl.0, cu.1 - cl.1, v - u - m, a);
            }
            total += wq * sum * du;
        }
        total
    }

    fn window(&self, j: usize, r: f64) -> Result<Option<Window>> {
        let grid = &self.prev.grid;
        let (s, y) = (self.prev.s, self.prev.y);
        let sp = grid.levels[j];
        let w = self.flow.at(r);
        let wl = self.flow.at(sp);
        let tau = s - r;
        let (ms, as_) = frozen_direct(self.coeffs, self.flow, y, r, s, None, None);
        if !(as_ > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let cy = coefficients_at(self.coeffs, r, y, w);
        let widen = if self.prev.k == 1 { 1.0 } else { 2.0 };
        let half = self.extent * (widen * self.lambda * tau).sqrt() + self.spread * tau;
        let c = y - ms;
        let lo = (c - half).max(grid.space.x0);
        let hi = (c + half).min(grid.space.end());
        if lo >= hi {
            return Ok(None);
        }
        let sd_lo = (tau / self.lambda).sqrt();
        let resolved = sd_lo >= 3.0 * grid.space.h;
        let blended = if self.prev.k > 1 && resolved { Some(self.blended(r)) } else { None };
        let kern_at = |u: f64, cu: (f64, f64)| match &blended {
            Some(b) => grid.space.interpolate(b, u),
            None if self.prev.k == 1 => h_value(cu.0 - cy.0, cu.1 - cy.1, y - u - ms, as_),
            None => self.point_value(self.prev.k, r, u),
        };
        let span = self.table.span(sp, r);
        let (wgrid, lattice_base) = if sd_lo / 3.0 >= self.lattice.h {
            let Some((l0, l1)) = self.lattice.range(lo, hi) else { return Ok(None) };
            (UniformGrid { x0: self.lattice.point(l0), h: self.lattice.h, n: l1 - l0 + 1 }, Some(l0))
        } else {
            let h = sd_lo / 3.0;
            (UniformGrid { x0: lo, h, n: ((hi - lo) / h).floor() as usize + 1 }, None)
        };
        let n = wgrid.n;
        let (mut kern, mut level, mut moments) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for p in 0..n {
            let u = wgrid.point(p);
            let cu = coefficients_at(self.coeffs, r, u, w);
            kern.push(kern_at(u, cu));
            match lattice_base {
                Some(l0) => {
                    let cl = self.level_lattice[j][l0 + p];
                    level.push(cl);
                    moments.push(self.table.integrate(l0 + p, &span, cl, cu));
                }
                None => {
                    let cl = coefficients_at(self.coeffs, sp, u, wl);
                    level.push(cl);
                    moments.push(frozen_direct(self.coeffs, self.flow, u, sp, r, Some(cl), Some(cu)));
                }
            }
        }
        Ok(Some(Window { grid: wgrid, kern, level, moments }))
    }

    fn level(&self, j: usize) -> Result<Vec<f64>> {
        let grid = &self.prev.grid;
        let sp = grid.levels[j];
        let wl = self.flow.at(sp);
        let points = grid.space.points();
        let mut out = vec![0.0; grid.space.n];
        let coef: Vec<(f64, f64)> = points.iter().map(|&u| coefficients_at(self.coeffs, sp, u, wl)).collect();
        if coef.iter().all(|c| *c == coef[0]) {
            return Ok(out);
        }
        for (r, wq) in self.rule.mapped(sp, self.prev.s) {
            let Some(win) = self.window(j, r)? else { continue };
            let (glo, ghi) = (win.grid.x0, win.grid.end());
            let tau = r - sp;
            let sd_t = (tau / self.lambda).sqrt();
            let sd_k = ((self.prev.s - r) / self.lambda).sqrt();
            let spacing = sd_t.min(sd_k) / 3.0;
            let w = self.flow.at(r);
            let span_x = self.table.span(sp, r);
            for i in 0..grid.space.n {
                let yp = points[i];
                let ci = coef[i];
                let (mi, _) = self.table.integrate(i * self.refine, &span_x, ci, coefficients_at(self.coeffs, r, yp, w));
                let half = self.extent * (self.lambda * tau).sqrt() + self.spread * tau;
                let lo = glo.max(yp + mi - half);
                let hi = ghi.min(yp + mi + half);
                if lo >= hi {
                    continue;
                }
                let mut sum = 0.0;
                if spacing >= win.grid.h {
                    let stride = (spacing / win.grid.h).floor() as usize;
                    let Some((p0, p1)) = win.grid.range(lo, hi) else { continue };
                    let mut p = p0;
                    while p <= p1 {
                        let u = win.grid.point(p);
                        let (m, a) = win.moments[p];
                        let cl = win.level[p];
                        sum += win.kern[p] * h_value(ci.0 - cl.0, ci.1 - cl.1, u - yp - m, a);
                        p += stride;
                    }
                    sum *= stride as f64 * win.grid.h;
                } else {
                    let n = ((hi - lo) / spacing).ceil().max(1.0) as usize;
                    let du = (hi - lo) / n as f64;
                    for p in 0..=n {
                        let u = lo + p as f64 * du;
                        let kv = win.grid.interpolate(&win.kern, u);
                        if kv == 0.0 {
                            continue;
                        }
                        let cl = coefficients_at(self.coeffs, sp, u, wl);
                        let cu = coefficients_at(self.coeffs, r, u, w);
                        let (m, a) = frozen_direct(self.coeffs, self.flow, u, sp, r, Some(cl), Some(cu));
                        let wt = if p == 0 || p == n { 0.5 } else { 1.0 };
                        sum += wt * kv * h_value(ci.0 - cl.0, ci.1 - cl.1, u - yp - m, a);
                    }
                    sum *= du;
                }
                out[i] += wq * sum;
            }
        }
        Ok(out)
    }
}

/// One more convolution with H: the table of order k + 1 on the grid of `prev`.
/// The order-1 input is re-evaluated exactly at inner nodes.
pub fn iterate_kernel(coeffs: &CoefficientSet, flow: &ScalarFlow, prev: &KernelTable, config: &ParametrixConfig) -> Result<KernelTable> {
    coeffs.require_scalar()?;
    if prev.k == 0 {
        return Err(Error::Config("iterated kernels start at k = 1".into()));
    }
    let grid = &prev.grid;
    let profile = coeffs.profile();
    let lattice = grid.lattice(config.refine);
    let lattice_points = lattice.points();
    let table = FrozenTable::new(coeffs, flow, grid.t, grid.s, &lattice_points)?;
    let level_lattice: Vec<Vec<(f64, f64)>> = grid
        .levels
        .iter()
        .map(|&r| {
            let w = flow.at(r);
            lattice_points.iter().map(|&u| coefficients_at(coeffs, r, u, w)).collect()
        })
        .collect();
    let spread = level_lattice
        .iter()
        .map(|v| {
            let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, c| (acc.0.min(c.0), acc.1.max(c.0)));
            hi - lo
        })
        .fold(0.0, f64::max);
    let it = Iterator_ {
        coeffs,
        flow,
        prev,
        lattice,
        refine: config.refine,
        extent: config.extent,
        lambda: profile.lambda,
        gamma: profile.gamma_a,
        table,
        rule: GradedRule::new(config.inner_nodes, config.grading_for(profile)),
        nested: GradedRule::new((config.inner_nodes / 2).max(4), config.grading_for(profile)),
        level_lattice,
        spread,
    };
    let nl = grid.levels.len();
    let mut values = vec![Vec::new(); nl];
    for (j, row) in values.iter_mut().enumerate().take(nl - 1) {
        *row = it.level(j)?;
    }
    Ok(KernelTable { k: prev.k + 1, s: prev.s, y: prev.y, grid: grid.clone(), values })
}
