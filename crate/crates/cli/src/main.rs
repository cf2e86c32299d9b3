use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use selmut_cli::sweep::{parse_values, run_sweep};
use selmut_cli::{run_file, Command, EXIT_VALIDATION};

#[derive(Parser)]
#[command(name = "selmut", version, about = "Simulate and analyze selection-mutation scenarios")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for randomized initial measures.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the model and write trajectory.csv.
    Simulate { config: PathBuf },
    /// Integrate and run every requested analysis.
    Analyze { config: PathBuf },
    /// Solve for equilibria and run continuations without integrating.
    Equilibrium { config: PathBuf },
    /// Run `analyze` once per parameter value.
    Sweep {
        config: PathBuf,
        /// Dotted path to a numeric scenario value, e.g. `kernel.blend.eps`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
    },
}

fn report_errors(errors: &[String]) {
    for e in errors {
        eprintln!("error: {e}");
    }
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, config) = match cli.cmd {
        Cmd::Simulate { config } => (Command::Simulate, config),
        Cmd::Analyze { config } => (Command::Analyze, config),
        Cmd::Equilibrium { config } => (Command::Equilibrium, config),
        Cmd::Sweep { config, param, values } => {
            let values = match parse_values(&values) {
                Ok(v) => v,
                Err(e) => {
                    report_errors(&[e]);
                    return code(EXIT_VALIDATION);
                }
            };
            let outcome = run_sweep(Command::Analyze, &config, &param, &values, &cli.out, cli.seed);
            report_errors(&outcome.errors);
            for (i, run) in outcome.runs.iter().enumerate() {
                if run.exit_code != 0 {
                    eprintln!("run {i} (value {}) exited {}: {}", values[i], run.exit_code, run.errors.join("; "));
                }
            }
            return code(outcome.exit_code);
        }
    };
    let outcome = run_file(cmd, &config, &cli.out, cli.seed);
    report_errors(&outcome.errors);
    code(outcome.exit_code)
}
