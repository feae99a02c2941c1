use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use mkv_numerics::cli::{run, Command};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sub {
    Simulate,
    Picard,
    Density,
    Constants,
    Verify,
    DerivativeScan,
    UCheck,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Simulate => Command::Simulate,
            Sub::Picard => Command::Picard,
            Sub::Density => Command::Density,
            Sub::Constants => Command::Constants,
            Sub::Verify => Command::Verify,
            Sub::DerivativeScan => Command::DerivativeScan,
            Sub::UCheck => Command::UCheck,
        }
    }
}

/// McKean–Vlasov experiment runner. Numeric parameters live in the JSON config.
#[derive(Parser, Debug)]
#[command(name = "mkv", version)]
struct Args {
    #[arg(value_enum)]
    command: Sub,
    /// JSON experiment config.
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    ExitCode::from(run(args.command.into(), &args.config, args.out.as_deref()) as u8)
}
