//! Constants C_k of the iterated-kernel bounds and their closed-form envelope.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Beta function through the Gamma identity B(a, b) = G(a) G(b) / G(a + b).
pub fn beta(a: f64, b: f64) -> f64 {
    ln_beta(a, b).exp()
}

/// C_1 = C, C_{k+1} = C C_k B(k gamma/2, gamma/2), carried in log space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParametrixConstants {
    pub c: f64,
    pub gamma: f64,
    pub k_max: usize,
    /// log C_k for k = 1..=k_max.
    pub log_values: Vec<f64>,
}

impl ParametrixConstants {
    pub fn log_value(&self, k: usize) -> f64 {
        self.log_values[k - 1]
    }

    /// C_k; may be +inf when it overflows, the log stays exact.
    pub fn value(&self, k: usize) -> f64 {
        self.log_value(k).exp()
    }

    pub fn values(&self) -> Vec<f64> {
        self.log_values.iter().map(|v| v.exp()).collect()
    }
}

fn check(c: f64, gamma: f64) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!("C = {c} must be positive")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!("gamma = {gamma} is outside (0, 1]")));
    }
    Ok(())
}

pub fn constants(c: f64, gamma: f64, k_max: usize) -> Result<ParametrixConstants> {
    check(c, gamma)?;
    if k_max == 0 {
        return Err(Error::Config("k_max must be at least 1".into()));
    }
    let lc = c.ln();
    let mut log_values = Vec::with_capacity(k_max);
    log_values.push(lc);
    for k in 1..k_max {
        let prev = log_values[k - 1];
        log_values.push(prev + lc + ln_beta(k as f64 * gamma / 2.0, gamma / 2.0));
    }
    Ok(ParametrixConstants { c, gamma, k_max, log_values })
}

/// K(gamma) = ceil(2 / gamma).
pub fn threshold(gamma: f64) -> usize {
    let q = 2.0 / gamma;
    let r = q.round();
    if (q - r).abs() < 1e-12 {
        r as usize
    } else {
        q.ceil() as usize
    }
}

/// log of C(K) C^k 4^k / (gamma^k (k!)^{gamma/2}) with
/// C(K) = 4^{-K} (K!)^{gamma/2} prod_{l=1}^{K-1} B(l gamma/2, gamma/2).
pub fn log_constants_asymptotic(c: f64, gamma: f64, k: usize) -> Result<f64> {
    check(c, gamma)?;
    let big_k = threshold(gamma);
    if k < big_k {
        return Err(Error::Domain { k, threshold: big_k });
    }
    let ln_fact = |n: usize| ln_gamma(n as f64 + 1.0);
    let log_ck = -(big_k as f64) * 4f64.ln()
        + 0.5 * gamma * ln_fact(big_k)
        + (1..big_k).map(|l| ln_beta(l as f64 * gamma / 2.0, gamma / 2.0)).sum::<f64>();
    let kf = k as f64;
    Ok(log_ck + kf * c.ln() + kf * 4f64.ln() - kf * gamma.ln() - 0.5 * gamma * ln_fact(k))
}

pub fn constants_asymptotic(c: f64, gamma: f64, k: usize) -> Result<f64> {
    log_constants_asymptotic(c, gamma, k).map(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_of_halves_is_pi() {
        assert!((beta(0.5, 0.5) - std::f64::consts::PI).abs() < 1e-12);
        assert!((beta(1.0, 0.5) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_handles_exact_quotients() {
        assert_eq!(threshold(1.0), 2);
        assert_eq!(threshold(0.5), 4);
        assert_eq!(threshold(0.3), 7);
    }

    #[test]
    fn closed_form_below_threshold_is_a_domain_error() {
        assert!(matches!(constants_asymptotic(1.0, 0.5, 3), Err(Error::Domain { k: 3, threshold: 4 })));
    }
}
