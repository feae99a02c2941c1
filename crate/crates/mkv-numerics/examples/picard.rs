//! Picard iteration on the law flow for the Hölder-drift problem.
use mkv_numerics::measure::EmpiricalMeasure;
use mkv_numerics::model::builtin_problem;
use mkv_numerics::rng::NoiseStream;
use mkv_numerics::simulator::{picard_iterate, SimulationConfig};

fn main() -> mkv_numerics::Result<()> {
    let n = 2000;
    let mut z = vec![0.0; n];
    NoiseStream::new(1, 0, n).standard_normals(0, &mut z);
    let mu0 = EmpiricalMeasure::from_scalars(z.iter().map(|v| 0.5 + 0.5 * v).collect())?;
    let coeffs = builtin_problem("holder-drift", 1)?;
    let cfg = SimulationConfig::new(0.0, 0.5, 50, n, 42, 1);
    let report = picard_iterate(&coeffs, &mu0, &cfg, 1e-10, 25)?;
    println!("m  delta_m  w2_gap");
    for (m, (d, w)) in report.increments.iter().zip(&report.w2_gaps).enumerate() {
        println!("{m:2}  {d:.3e}  {w:.3e}");
    }
    println!("converged: {}", report.converged);
    let flow = &report.final_flow;
    println!("w1 at T: {:.5}", flow.w1().last().unwrap());
    Ok(())
}
