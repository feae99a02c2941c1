//! u(t, x) from Feynman–Kac paths and from the parametrix series, under the same flow.
use mkv_numerics::estimates::{feynman_kac_u_with_flow, parametrix_u_with};
use mkv_numerics::measure::EmpiricalMeasure;
use mkv_numerics::model::REGISTRY;
use mkv_numerics::model::builtin_problem;
use mkv_numerics::parametrix::ParametrixConfig;
use mkv_numerics::rng::NoiseStream;
use mkv_numerics::simulator::{simulate_mkv, SimulationConfig};

fn main() -> mkv_numerics::Result<()> {
    let n = 200;
    let mut z = vec![0.0; n];
    NoiseStream::new(5, 0, n).standard_normals(0, &mut z);
    let mu0 = EmpiricalMeasure::from_scalars(z.iter().map(|v| 0.5 + 0.5 * v).collect())?;
    let source = |_: f64, y: &[f64], w: f64| y[0].cos() + 0.5 * w;
    for name in REGISTRY {
        let coeffs = builtin_problem(name, 1)?;
        let cfg = SimulationConfig::new(0.0, 0.5, 64, n, 42, 1);
        let flow = simulate_mkv(&coeffs, &mu0, &cfg, 1e-8, 25)?.flow;
        let paths = SimulationConfig { n_particles: 20_000, ..cfg };
        let (fk, se) = feynman_kac_u_with_flow(&coeffs, &source, &[0.2], &flow, &paths)?;
        let pu = parametrix_u_with(&coeffs, &source, 0.0, 0.2, 0.5, &flow, &ParametrixConfig::default())?;
        println!("{name:17} feynman-kac {fk:.5} ± {se:.5}  parametrix {pu:.5}  diff {:.2e}", (fk - pu).abs());
    }
    Ok(())
}
