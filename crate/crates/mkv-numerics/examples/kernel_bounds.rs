//! Fits the k = 1 kernel bound constants and checks the iterated kernels
//! H^(x)2 and H^(x)3 against them without refitting.
use mkv_numerics::estimates::check_kernel_bound;
use mkv_numerics::measure::ScalarFlow;
use mkv_numerics::model::builtin_problem;
use mkv_numerics::parametrix::ParametrixConfig;

fn main() -> mkv_numerics::Result<()> {
    let coeffs = builtin_problem("holder-diffusion", 1)?;
    let times: Vec<f64> = (0..=50).map(|k| k as f64 / 100.0).collect();
    let w: Vec<f64> = times.iter().map(|t| 0.4 - 0.1 * t).collect();
    let flow = ScalarFlow::new(times, w.clone(), w)?;
    let cfg = ParametrixConfig { points_per_sd: 10.0, time_levels: 32, ..ParametrixConfig::default() };
    let check = check_kernel_bound(&coeffs, &flow, 0.0, 0.5, &[0.2], 3, &cfg)?;
    let f = check.fit;
    println!("fitted C = {:.4}, C_hat = {:.4}, c = {:.4}", f.big_c, f.c_hat, f.rate);
    for r in &check.reports {
        println!("{:16} nodes {:7} max ratio {:.4} {}", r.claim, r.grid_size, r.max_ratio, if r.pass { "ok" } else { "violated" });
    }
    Ok(())
}
