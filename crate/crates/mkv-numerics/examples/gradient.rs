//! |d_x u| and |d_x^2 u| against the horizon T for the Hölder-drift problem.
use mkv_numerics::config::SourceChoice;
use mkv_numerics::estimates::{u_gradient_bounds, GradientConfig};
use mkv_numerics::measure::EmpiricalMeasure;
use mkv_numerics::model::builtin_problem;
use mkv_numerics::parametrix::ParametrixConfig;
use mkv_numerics::rng::NoiseStream;

fn main() -> mkv_numerics::Result<()> {
    let n = 200;
    let mut z = vec![0.0; n];
    NoiseStream::new(4, 0, n).standard_normals(0, &mut z);
    let mu0 = EmpiricalMeasure::from_scalars(z.iter().map(|v| 0.5 + 0.5 * v).collect())?;
    let coeffs = builtin_problem("holder-drift", 1)?;
    let source = SourceChoice::Drift.build(&coeffs);
    let config = GradientConfig {
        t: 0.0,
        step: 0.01,
        n_particles: n,
        seed: 7,
        tol: 1e-8,
        m_max: 25,
        delta: 0.02,
        parametrix: ParametrixConfig { points_per_sd: 20.0, ..ParametrixConfig::default() },
        lions: None,
        z_indices: Vec::new(),
        flow_epsilon: 1e-2,
    };
    let horizons = [0.5, 0.25, 0.125, 0.0625];
    let scan = u_gradient_bounds(&coeffs, &*source, 0.2, &mu0, &horizons, &config)?;
    for i in 0..horizons.len() {
        println!("T = {:.4}  u = {:.5}  |d_x u| = {:.5}  |d_x^2 u| = {:.4}", horizons[i], scan.u[i], scan.dx[i], scan.dxx[i]);
    }
    println!("d_x u exponent {:.3} (r^2 {:.4})", scan.fit_dx.slope, scan.fit_dx.r_squared);
    Ok(())
}
