use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use flockopt::cli_io;

/// Decentralized energy-optimal flocking simulator.
#[derive(Parser)]
#[command(name = "flockopt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario file and write trajectory, metrics, and summary
    /// logs.
    Run {
        scenario: PathBuf,
        /// Output directory for trajectory.csv, metrics.csv, summary.txt.
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Parse and validate a scenario file, printing the normalized
    /// effective configuration.
    Validate { scenario: PathBuf },
    /// Emit plot-ready data from a trajectory log.
    Plotdata {
        log: PathBuf,
        /// Output directory for snapshot, acceleration, and histogram files.
        #[arg(long, default_value = "plots")]
        out_dir: PathBuf,
        /// Comma-separated snapshot times (defaults to the quartiles of the
        /// logged range).
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run { scenario, out_dir } => cli_io::cmd_run(&scenario, &out_dir),
        Command::Validate { scenario } => match cli_io::cmd_validate(&scenario) {
            Ok(echo) => {
                print!("{echo}");
                Ok(())
            }
            Err(e) => Err(e),
        },
        Command::Plotdata { log, out_dir, times } => {
            cli_io::cmd_plotdata(&log, &out_dir, times.as_deref()).map(|_| ())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
