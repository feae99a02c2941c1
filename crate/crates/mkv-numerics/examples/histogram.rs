//! Euler–Maruyama histogram of X_s^{t,x} against bin integrals of the series.
use mkv_numerics::estimates::histogram_agreement;
use mkv_numerics::measure::EmpiricalMeasure;
use mkv_numerics::model::builtin_problem;
use mkv_numerics::parametrix::ParametrixConfig;
use mkv_numerics::rng::NoiseStream;
use mkv_numerics::simulator::{simulate_mkv, SimulationConfig};

fn main() -> mkv_numerics::Result<()> {
    let n = 1000;
    let mut z = vec![0.0; n];
    NoiseStream::new(1, 0, n).standard_normals(0, &mut z);
    let mu0 = EmpiricalMeasure::from_scalars(z.iter().map(|v| 0.5 + 0.5 * v).collect())?;
    let coeffs = builtin_problem("holder-diffusion", 1)?;
    let flow = simulate_mkv(&coeffs, &mu0, &SimulationConfig::new(0.0, 0.5, 200, n, 42, 1), 1e-8, 25)?.flow;
    let paths = SimulationConfig::new(0.0, 0.5, 200, 100_000, 7, 1);
    let h = histogram_agreement(&coeffs, &flow, 0.2, &paths, 50, &ParametrixConfig::default())?;
    for b in (0..50).step_by(5) {
        println!("[{:6.3}, {:6.3})  mc {:.5}  series {:.5}  se {:.5}", h.edges[b], h.edges[b + 1], h.monte_carlo[b], h.series[b], h.stderr[b]);
    }
    println!("max |mc - series| / (3 se + 1e-3) = {:.3}", h.max_ratio);
    Ok(())
}
