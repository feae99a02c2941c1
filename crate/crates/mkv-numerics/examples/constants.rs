//! The constants C_k of the iterated-kernel bounds next to their closed-form envelope.
use mkv_numerics::parametrix::{constants, log_constants_asymptotic, threshold};

fn main() -> mkv_numerics::Result<()> {
    for gamma in [0.5, 1.0] {
        let table = constants(1.0, gamma, 30)?;
        println!("gamma = {gamma}, closed form from k = {}", threshold(gamma));
        println!("{:>3} {:>12} {:>12} {:>10}", "k", "log C_k", "log bound", "diff");
        for k in (1..=30).step_by(3) {
            let lc = table.log_value(k);
            match log_constants_asymptotic(1.0, gamma, k) {
                Ok(la) => println!("{k:3} {lc:12.4} {la:12.4} {:10.4}", lc - la),
                Err(_) => println!("{k:3} {lc:12.4}"),
            }
        }
    }
    Ok(())
}
