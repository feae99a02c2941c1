//! Fitted constants of the kernel bound |H| <= C Chat tau^{gamma/2 - 1} p^_c and
//! the series tail they imply.

use serde::{Deserialize, Serialize};

use super::constants::ln_beta;
use crate::frozen::majorant_1d;

/// Headroom applied to fitted prefactors.
pub const HEADROOM: f64 = 1.1;

const BINS: usize = 24;

/// Constants of |H(s', y'; s, y)| <= C Chat (s - s')^{gamma/2 - 1} p^_c(s - s', y - y'),
/// with Chat = 1/sqrt(pi c) so that the bound reproduces itself under convolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelFit {
    pub gamma: f64,
    /// Rate c of the majorant.
    pub rate: f64,
    /// C Chat; zero when every sample vanishes.
    pub prefactor: f64,
    pub big_c: f64,
    pub c_hat: f64,
    pub samples: usize,
}

impl KernelFit {
    /// The k = 1 bound at (tau, distance).
    pub fn bound(&self, tau: f64, dist: f64) -> f64 {
        self.prefactor * tau.powf(0.5 * self.gamma - 1.0) * majorant_1d(self.rate, tau, dist)
    }
}

/// Fits (C, Chat, c) to samples (tau, distance, |H|): c from a regression of the
/// binned upper envelope of log(|H| tau^{1 - gamma/2} tau^{1/2}) against
/// distance^2/tau, then the smallest prefactor covering every sample, times
/// [`HEADROOM`]. The rate is kept in [1/(16 Lambda), 1/(2 Lambda)].
pub fn fit_kernel(samples: &[(f64, f64, f64)], gamma: f64, lambda: f64) -> KernelFit {
    let c_lo = 1.0 / (16.0 * lambda);
    let c_hi = 1.0 / (2.0 * lambda);
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.2 > 0.0 && s.2.is_finite() && s.0 > 0.0)
        .map(|&(tau, d, v)| (d * d / tau, v.ln() + (1.5 - 0.5 * gamma) * tau.ln()))
        .collect();
    if pts.is_empty() {
        let rate = 0.25 / lambda;
        return KernelFit { gamma, rate, prefactor: 0.0, big_c: 0.0, c_hat: 1.0 / (std::f64::consts::PI * rate).sqrt(), samples: samples.len() };
    }
    let top = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let xi_max = pts.iter().filter(|p| p.1 > top - 30.0).map(|p| p.0).fold(0.0, f64::max);
    let mut env: Vec<Option<(f64, f64)>> = vec![None; BINS];
    for &(xi, v) in &pts {
        if xi > xi_max || v < top - 30.0 {
            continue;
        }
        let b = ((xi / xi_max.max(1e-300)) * BINS as f64).min(BINS as f64 - 1.0) as usize;
        if env[b].map_or(true, |e| v > e.1) {
            env[b] = Some((xi, v));
        }
    }
    let env: Vec<(f64, f64)> = env.into_iter().flatten().collect();
    let rate = if env.len() >= 2 {
        let n = env.len() as f64;
        let mx = env.iter().map(|p| p.0).sum::<f64>() / n;
        let my = env.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = env.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = env.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        if sxx > 0.0 {
            (-sxy / sxx).clamp(c_lo, c_hi)
        } else {
            c_hi
        }
    } else {
        c_hi
    };
    // |H| tau^{3/2 - gamma/2} e^{c xi} / c <= prefactor
    let log_p = pts.iter().map(|&(xi, v)| v + rate * xi - rate.ln()).fold(f64::NEG_INFINITY, f64::max);
    let prefactor = HEADROOM * log_p.exp();
    let c_hat = 1.0 / (std::f64::consts::PI * rate).sqrt();
    KernelFit { gamma, rate, prefactor, big_c: prefactor / c_hat, c_hat, samples: samples.len() }
}

/// Bound on sum_{k > order} |p~ (x) H^{(x)k}|(t, x; s, y) from the fitted constants:
/// the k-th term is at most C_k tau^{k gamma/2} (2/(k gamma)) Cbar p^_c(tau, dist),
/// with Cbar = sqrt(Lambda/(2 pi))/c so that Cbar p^_c dominates the centered frozen
/// density. Summed until a term falls below 1e-3 of the partial sum.
pub fn series_tail(fit: &KernelFit, order: usize, tau: f64, dist: f64, lambda: f64) -> f64 {
    if fit.prefactor == 0.0 {
        return 0.0;
    }
    let g = fit.gamma;
    let c_bar = (lambda / (2.0 * std::f64::consts::PI)).sqrt() / fit.rate;
    let base = c_bar.ln() + majorant_1d(fit.rate, tau, dist).ln();
    let lc = fit.big_c.ln();
    let mut log_ck = lc;
    let mut log_sum = f64::NEG_INFINITY;
    let mut k = 1usize;
    loop {
        if k > order {
            let kf = k as f64;
            let term = log_ck + 0.5 * kf * g * tau.ln() + (2.0 / (kf * g)).ln() + base;
            let below = term < log_sum + 1e-3f64.ln();
            log_sum = if log_sum == f64::NEG_INFINITY {
                term
            } else {
                let hi = log_sum.max(term);
                hi + ((log_sum - hi).exp() + (term - hi).exp()).ln()
            };
            if below || k > 50_000_000 {
                break;
            }
        }
        log_ck += lc + ln_beta(k as f64 * g / 2.0, g / 2.0);
        k += 1;
    }
    log_sum.exp()
}
