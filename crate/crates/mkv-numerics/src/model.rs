//! Coefficient sets of the McKean–Vlasov SDE
//!
//! ```text
//! dX_t = b(t, X_t, <phi1, mu_t>) dt + sigma(t, X_t, <phi2, mu_t>) dB_t,   mu_t = law(X_t)
//! ```
//!
//! together with their declared regularity and a sampling check of that
//! declaration.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(t, x, w, out)`: writes b(t, x, w) into `out` (length d).
pub type VectorField = Arc<dyn Fn(f64, &[f64], f64, &mut [f64]) + Send + Sync>;
/// `(t, x, w, out)`: writes sigma(t, x, w) row-major into `out` (length d*d).
pub type MatrixField = Arc<dyn Fn(f64, &[f64], f64, &mut [f64]) + Send + Sync>;
pub type TestFunction = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Clipping radius used by the registry to keep unbounded test functions bounded.
pub const CLIP: f64 = 1.0e6;

/// Step of the central difference used for w-derivatives that are not supplied.
pub const W_DIFF_STEP: f64 = 1.0e-6;

/// Declared regularity of a coefficient set.
///
/// `c_phi1` and `c_phi2` are the Hölder seminorms of the test functions; they
/// are needed to make the Hölder check of `phi1`/`phi2` falsifiable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityProfile {
    pub alpha1: f64,
    pub alpha2: f64,
    pub gamma_a: f64,
    pub gamma_a_prime: f64,
    pub lambda: f64,
    pub c_b: f64,
    pub c_b_prime: f64,
    pub c_sigma: f64,
    pub c_sigma_prime: f64,
    pub c_phi1: f64,
    pub c_phi2: f64,
}

impl RegularityProfile {
    pub fn validate(&self) -> Result<()> {
        let exps = [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("gamma_a", self.gamma_a),
            ("gamma_a_prime", self.gamma_a_prime),
        ];
        for (name, v) in exps {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} = {v} is outside (0, 1]")));
            }
        }
        if !(self.lambda > 1.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda = {} must exceed 1", self.lambda)));
        }
        let bounds = [
            ("c_b", self.c_b),
            ("c_b_prime", self.c_b_prime),
            ("c_sigma", self.c_sigma),
            ("c_sigma_prime", self.c_sigma_prime),
            ("c_phi1", self.c_phi1),
            ("c_phi2", self.c_phi2),
        ];
        for (name, v) in bounds {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be finite and nonnegative")));
            }
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct CoefficientSet {
    name: String,
    dim: usize,
    b: VectorField,
    sigma: MatrixField,
    phi1: TestFunction,
    phi2: TestFunction,
    db_dw: Option<VectorField>,
    dsigma_dw: Option<MatrixField>,
    profile: RegularityProfile,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("profile", &self.profile)
            .finish_non_exhaustive()
    }
}

impl CoefficientSet {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        b: VectorField,
        sigma: MatrixField,
        phi1: TestFunction,
        phi2: TestFunction,
        profile: RegularityProfile,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        profile.validate()?;
        Ok(CoefficientSet {
            name: name.into(),
            dim,
            b,
            sigma,
            phi1,
            phi2,
            db_dw: None,
            dsigma_dw: None,
            profile,
        })
    }

    /// Supplies analytic derivatives of b and sigma in their scalar argument.
    pub fn with_w_derivatives(mut self, db_dw: Option<VectorField>, dsigma_dw: Option<MatrixField>) -> Self {
        self.db_dw = db_dw;
        self.dsigma_dw = dsigma_dw;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn profile(&self) -> &RegularityProfile {
        &self.profile
    }

    pub fn phi1_fn(&self) -> TestFunction {
        self.phi1.clone()
    }

    pub fn phi2_fn(&self) -> TestFunction {
        self.phi2.clone()
    }

    #[inline]
    pub fn drift(&self, t: f64, x: &[f64], w: f64, out: &mut [f64]) {
        (self.b)(t, x, w, out)
    }

    #[inline]
    pub fn diffusion(&self, t: f64, x: &[f64], w: f64, out: &mut [f64]) {
        (self.sigma)(t, x, w, out)
    }

    #[inline]
    pub fn phi1(&self, x: &[f64]) -> f64 {
        (self.phi1)(x)
    }

    #[inline]
    pub fn phi2(&self, x: &[f64]) -> f64 {
        (self.phi2)(x)
    }

    pub fn drift_dw(&self, t: f64, x: &[f64], w: f64, out: &mut [f64]) {
        match &self.db_dw {
            Some(f) => f(t, x, w, out),
            None => central_difference_w(&self.b, self.dim, t, x, w, out),
        }
    }

    pub fn diffusion_dw(&self, t: f64, x: &[f64], w: f64, out: &mut [f64]) {
        match &self.dsigma_dw {
            Some(f) => f(t, x, w, out),
            None => central_difference_w(&self.sigma, self.dim * self.dim, t, x, w, out),
        }
    }

    /// a = sigma sigma^T, row-major.
    pub fn diffusion_matrix(&self, t: f64, x: &[f64], w: f64, out: &mut [f64]) {
        let d = self.dim;
        let mut s = vec![0.0; d * d];
        self.diffusion(t, x, w, &mut s);
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = (0..d).map(|k| s[i * d + k] * s[j * d + k]).sum();
            }
        }
    }

    /// Scalar drift for d = 1.
    #[inline]
    pub fn b1(&self, t: f64, x: f64, w: f64) -> f64 {
        let mut out = [0.0];
        (self.b)(t, std::slice::from_ref(&x), w, &mut out);
        out[0]
    }

    /// Scalar diffusion coefficient for d = 1.
    #[inline]
    pub fn sigma1(&self, t: f64, x: f64, w: f64) -> f64 {
        let mut out = [0.0];
        (self.sigma)(t, std::slice::from_ref(&x), w, &mut out);
        out[0]
    }

    /// a = sigma^2 for d = 1.
    #[inline]
    pub fn a1(&self, t: f64, x: f64, w: f64) -> f64 {
        let s = self.sigma1(t, x, w);
        s * s
    }

    pub fn require_scalar(&self) -> Result<()> {
        if self.dim != 1 {
            return Err(Error::Unsupported(format!(
                "`{}` has d = {}, this operation is d = 1 only",
                self.name, self.dim
            )));
        }
        Ok(())
    }
}

fn central_difference_w(f: &VectorField, n: usize, t: f64, x: &[f64], w: f64, out: &mut [f64]) {
    let mut up = vec![0.0; n];
    let mut down = vec![0.0; n];
    f(t, x, w + W_DIFF_STEP, &mut up);
    f(t, x, w - W_DIFF_STEP, &mut down);
    for i in 0..n {
        out[i] = (up[i] - down[i]) / (2.0 * W_DIFF_STEP);
    }
}

pub const REGISTRY: [&str; 4] = ["gaussian", "mean-attract", "holder-drift", "holder-diffusion"];

/// Default space-Hölder exponent of the diffusion in `holder-diffusion`.
pub const HOLDER_DIFFUSION_GAMMA: f64 = 0.5;

fn identity_matrix(d: usize, out: &mut [f64]) {
    out.fill(0.0);
    for i in 0..d {
        out[i * d + i] = 1.0;
    }
}

fn clipped_first(x: &[f64]) -> f64 {
    x[0].clamp(-CLIP, CLIP)
}

fn clipped_sqrt_norm(x: &[f64]) -> f64 {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    r.min(CLIP).sqrt()
}

/// Builds a registry problem in dimension `dim`.
pub fn builtin_problem(name: &str, dim: usize) -> Result<CoefficientSet> {
    if dim == 0 {
        return Err(Error::Config("dimension must be positive".into()));
    }
    let lipschitz = RegularityProfile {
        alpha1: 1.0,
        alpha2: 1.0,
        gamma_a: 1.0,
        gamma_a_prime: 1.0,
        lambda: 1.0 + 1e-9,
        c_b: 0.0,
        c_b_prime: 0.0,
        c_sigma: 0.0,
        c_sigma_prime: 0.0,
        c_phi1: 1.0,
        c_phi2: 1.0,
    };
    let unit: MatrixField = Arc::new(move |_, _, _, out| identity_matrix(dim, out));
    let zero: VectorField = Arc::new(|_, _, _, out| out.fill(0.0));
    match name {
        "gaussian" => {
            let set = CoefficientSet::new(
                name,
                dim,
                zero.clone(),
                unit.clone(),
                Arc::new(clipped_first),
                Arc::new(clipped_first),
                lipschitz,
            )?;
            Ok(set.with_w_derivatives(Some(zero), Some(Arc::new(|_, _, _, out| out.fill(0.0)))))
        }
        "mean-attract" => {
            let b: VectorField = Arc::new(|_, _, w, out| {
                out.fill(0.0);
                out[0] = w;
            });
            let db: VectorField = Arc::new(|_, _, _, out| {
                out.fill(0.0);
                out[0] = 1.0;
            });
            let profile = RegularityProfile { c_b: CLIP, c_b_prime: 1.0, ..lipschitz };
            let set = CoefficientSet::new(
                name,
                dim,
                b,
                unit,
                Arc::new(clipped_first),
                Arc::new(clipped_first),
                profile,
            )?;
            Ok(set.with_w_derivatives(Some(db), Some(Arc::new(|_, _, _, out| out.fill(0.0)))))
        }
        "holder-drift" => {
            let b: VectorField = Arc::new(|_, x, w, out| {
                out.fill(0.0);
                out[0] = w.tanh() + 0.5 * x[0].sin();
            });
            let db: VectorField = Arc::new(|_, _, w, out| {
                out.fill(0.0);
                let c = w.cosh();
                out[0] = 1.0 / (c * c);
            });
            let profile = RegularityProfile {
                alpha1: 0.5,
                alpha2: 0.5,
                c_b: 1.5,
                c_b_prime: 1.0,
                ..lipschitz
            };
            let set = CoefficientSet::new(
                name,
                dim,
                b,
                unit,
                Arc::new(clipped_sqrt_norm),
                Arc::new(clipped_sqrt_norm),
                profile,
            )?;
            Ok(set.with_w_derivatives(Some(db), Some(Arc::new(|_, _, _, out| out.fill(0.0)))))
        }
        "holder-diffusion" => {
            if dim != 1 {
                return Err(Error::Unsupported("holder-diffusion is defined for d = 1".into()));
            }
            holder_diffusion(HOLDER_DIFFUSION_GAMMA)
        }
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}

/// The d = 1 problem with b = 0, phi1 = phi2 = tanh and
/// sigma(t, x, w) = sqrt(1 + 0.5 |sin x|^gamma (1 + tanh w) / 2).
pub fn holder_diffusion(gamma: f64) -> Result<CoefficientSet> {
    let sigma: MatrixField = Arc::new(move |_, x, w, out| {
        out[0] = (1.0 + 0.25 * x[0].sin().abs().powf(gamma) * (1.0 + w.tanh())).sqrt();
    });
    let dsigma: MatrixField = Arc::new(move |_, x, w, out| {
        let g = 0.25 * x[0].sin().abs().powf(gamma);
        let c = w.cosh();
        out[0] = g / (c * c) / (2.0 * (1.0 + g * (1.0 + w.tanh())).sqrt());
    });
    let zero: VectorField = Arc::new(|_, _, _, out| out.fill(0.0));
    let profile = RegularityProfile {
        alpha1: 1.0,
        alpha2: 1.0,
        gamma_a: gamma,
        gamma_a_prime: gamma,
        lambda: 1.5,
        c_b: 0.0,
        c_b_prime: 0.0,
        c_sigma: 0.25,
        c_sigma_prime: 0.125,
        c_phi1: 1.0,
        c_phi2: 1.0,
    };
    let set = CoefficientSet::new(
        "holder-diffusion",
        1,
        zero.clone(),
        sigma,
        Arc::new(|x: &[f64]| x[0].tanh()),
        Arc::new(|x: &[f64]| x[0].tanh()),
        profile,
    )?;
    Ok(set.with_w_derivatives(Some(zero), Some(dsigma)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub measured: f64,
    pub declared: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub problem: String,
    pub n_samples: usize,
    /// Extreme eigenvalues of sigma sigma^T over the samples.
    pub ellipticity: (f64, f64),
    pub checks: Vec<AssumptionCheck>,
    pub pass: bool,
}

/// Relative slack allowed between measured and declared constants.
pub const ASSUMPTION_SLACK: f64 = 0.01;

fn sample_point(rng: &mut ChaCha8Rng, d: usize, out: &mut [f64]) {
    for v in out.iter_mut().take(d) {
        *v = if rng.gen::<bool>() {
            rng.gen_range(-5.0..5.0)
        } else {
            let mag = 10f64.powf(rng.gen_range(-2.0..3.0));
            if rng.gen::<bool>() {
                mag
            } else {
                -mag
            }
        };
    }
}

fn sample_w(rng: &mut ChaCha8Rng, d: usize, phi: &TestFunction) -> f64 {
    // <phi, mu> lies in the closed convex hull of the range of phi
    let mut p = vec![0.0; d];
    sample_point(rng, d, &mut p);
    let a = phi(&p);
    sample_point(rng, d, &mut p);
    let b = phi(&p);
    let lam: f64 = rng.gen();
    lam * a + (1.0 - lam) * b
}

fn extreme_eigenvalues(a: &[f64], d: usize) -> (f64, f64) {
    if d == 1 {
        return (a[0], a[0]);
    }
    let m = DMatrix::from_row_slice(d, d, a);
    let eig = m.symmetric_eigen();
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Samples (t, x, x', w, w') and compares measured constants with the profile.
pub fn validate_assumptions(coeffs: &CoefficientSet, n_samples: usize, seed: u64) -> Result<AssumptionReport> {
    if n_samples < 100 {
        return Err(Error::Config(format!("n_samples = {n_samples} is below 100")));
    }
    let d = coeffs.dim();
    let p = coeffs.profile().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi1 = coeffs.phi1_fn();
    let phi2 = coeffs.phi2_fn();

    let mut x = vec![0.0; d];
    let mut xp = vec![0.0; d];
    let mut dir = vec![0.0; d];
    let mut v = vec![0.0; d];
    let mut m = vec![0.0; d * d];
    let mut mp = vec![0.0; d * d];

    let mut sup_b: f64 = 0.0;
    let mut sup_db: f64 = 0.0;
    let mut sup_dsigma: f64 = 0.0;
    let mut holder_sigma: f64 = 0.0;
    let mut holder_phi1: f64 = 0.0;
    let mut holder_phi2: f64 = 0.0;
    let mut eig_lo = f64::INFINITY;
    let mut eig_hi = f64::NEG_INFINITY;

    for _ in 0..n_samples {
        let t: f64 = rng.gen_range(0.0..1.0);
        sample_point(&mut rng, d, &mut x);
        for c in dir.iter_mut() {
            *c = rng.gen_range(-1.0..1.0);
        }
        let nd = norm(&dir).max(1e-12);
        let delta = 10f64.powf(rng.gen_range(-6.0..0.0));
        for i in 0..d {
            xp[i] = x[i] + delta * dir[i] / nd;
        }
        let dist = norm(&x.iter().zip(&xp).map(|(a, b)| a - b).collect::<Vec<_>>());
        if dist == 0.0 {
            continue;
        }
        let w1 = sample_w(&mut rng, d, &phi1);
        let w2 = sample_w(&mut rng, d, &phi2);

        coeffs.drift(t, &x, w1, &mut v);
        sup_b = sup_b.max(norm(&v));
        coeffs.drift_dw(t, &x, w1, &mut v);
        sup_db = sup_db.max(norm(&v));

        coeffs.diffusion(t, &x, w2, &mut m);
        coeffs.diffusion(t, &xp, w2, &mut mp);
        let diff: Vec<f64> = m.iter().zip(&mp).map(|(a, b)| a - b).collect();
        holder_sigma = holder_sigma.max(norm(&diff) / dist.powf(p.gamma_a));
        coeffs.diffusion_dw(t, &x, w2, &mut mp);
        sup_dsigma = sup_dsigma.max(norm(&mp));

        let mut a = vec![0.0; d * d];
        coeffs.diffusion_matrix(t, &x, w2, &mut a);
        let (lo, hi) = extreme_eigenvalues(&a, d);
        eig_lo = eig_lo.min(lo);
        eig_hi = eig_hi.max(hi);

        holder_phi1 = holder_phi1.max((phi1(&x) - phi1(&xp)).abs() / dist.powf(p.alpha1));
        holder_phi2 = holder_phi2.max((phi2(&x) - phi2(&xp)).abs() / dist.powf(p.alpha2));
    }

    let up = |name: &str, measured: f64, declared: f64| AssumptionCheck {
        name: name.to_string(),
        measured,
        declared,
        pass: measured.is_finite() && measured <= declared * (1.0 + ASSUMPTION_SLACK),
    };
    let checks = vec![
        up("sup |b|", sup_b, p.c_b),
        up("sup |d_w b|", sup_db, p.c_b_prime),
        up("holder sigma", holder_sigma, p.c_sigma),
        up("sup |d_w sigma|", sup_dsigma, p.c_sigma_prime),
        up("holder phi1", holder_phi1, p.c_phi1),
        up("holder phi2", holder_phi2, p.c_phi2),
        up("max eigenvalue of a", eig_hi, p.lambda),
        AssumptionCheck {
            name: "min eigenvalue of a".into(),
            measured: eig_lo,
            declared: 1.0 / p.lambda,
            pass: eig_lo >= 1.0 / p.lambda / (1.0 + ASSUMPTION_SLACK),
        },
    ];
    let pass = checks.iter().all(|c| c.pass);
    Ok(AssumptionReport {
        problem: coeffs.name().to_string(),
        n_samples,
        ellipticity: (eig_lo, eig_hi),
        checks,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_builds_every_name() {
        for name in REGISTRY {
            let set = builtin_problem(name, 1).unwrap();
            assert_eq!(set.name(), name);
        }
        assert!(matches!(builtin_problem("nope", 1), Err(Error::UnknownProblem(_))));
        assert!(builtin_problem("holder-diffusion", 2).is_err());
    }

    #[test]
    fn mean_attract_drift_is_the_moment() {
        let set = builtin_problem("mean-attract", 3).unwrap();
        let mut out = [0.0; 3];
        set.drift(0.0, &[5.0, -1.0, 2.0], 1.0, &mut out);
        assert_eq!(out, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn finite_difference_fallback_matches_analytic() {
        let set = holder_diffusion(0.5).unwrap();
        let bare = CoefficientSet::new(
            "bare",
            1,
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0),
            Arc::new(|_, x: &[f64], w: f64, out: &mut [f64]| {
                out[0] = (1.0 + 0.25 * x[0].sin().abs().sqrt() * (1.0 + w.tanh())).sqrt()
            }),
            Arc::new(|x: &[f64]| x[0].tanh()),
            Arc::new(|x: &[f64]| x[0].tanh()),
            set.profile().clone(),
        )
        .unwrap();
        let (mut a, mut b) = ([0.0], [0.0]);
        for &(x, w) in &[(0.3, 0.1), (2.0, -1.0), (-1.2, 0.7)] {
            set.diffusion_dw(0.0, &[x], w, &mut a);
            bare.diffusion_dw(0.0, &[x], w, &mut b);
            assert!((a[0] - b[0]).abs() < 1e-8, "{} vs {}", a[0], b[0]);
        }
    }
}
