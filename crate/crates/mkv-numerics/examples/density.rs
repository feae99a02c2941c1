//! Parametrix series for the transition density of the Hölder-diffusion problem,
//! order by order, against the frozen Gaussian.
use mkv_numerics::measure::EmpiricalMeasure;
use mkv_numerics::model::builtin_problem;
use mkv_numerics::parametrix::{parametrix_density_grid, ParametrixConfig};
use mkv_numerics::rng::NoiseStream;
use mkv_numerics::simulator::{simulate_mkv, SimulationConfig};

fn main() -> mkv_numerics::Result<()> {
    let n = 500;
    let mut z = vec![0.0; n];
    NoiseStream::new(1, 0, n).standard_normals(0, &mut z);
    let mu0 = EmpiricalMeasure::from_scalars(z.iter().map(|v| 0.5 + 0.5 * v).collect())?;
    let coeffs = builtin_problem("holder-diffusion", 1)?;
    let flow = simulate_mkv(&coeffs, &mu0, &SimulationConfig::new(0.0, 0.5, 64, n, 42, 1), 1e-8, 25)?.flow;
    let ys: Vec<f64> = (0..9).map(|i| -1.4 + 0.4 * i as f64).collect();
    let res = parametrix_density_grid(&coeffs, &flow, 0.0, 0.2, 0.5, &ys, &ParametrixConfig::default())?;
    println!("{:>6} {:>10} {:>11} {:>11} {:>11} {:>10}", "y", "p", "order 0", "order 1", "order 2", "tail");
    for (y, r) in ys.iter().zip(&res) {
        println!(
            "{y:6.2} {:10.6} {:11.6} {:11.2e} {:11.2e} {:10.2e}",
            r.value, r.per_order[0], r.per_order[1], r.per_order[2], r.tail_bound
        );
    }
    Ok(())
}
