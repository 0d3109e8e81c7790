use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vanroos_cli::run::cmd_run;
use vanroos_cli::sweep::{parse_values, sweep, workers_from_env};
use vanroos_cli::verify::run_suite;
use vanroos_cli::{CliError, ExitStatus};

/// Transient drift-diffusion device simulator.
#[derive(Parser)]
#[command(name = "simulate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one deck. Exit 0 on reaching t_end, 3 on blow-up, 1 on failure.
    Run {
        deck: PathBuf,
        /// Output directory (default: `<deck stem>-out` in the working directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a deck once per value of a scalar parameter and print a CSV table.
    /// The worker count is read from SIMULATE_WORKERS.
    Sweep {
        deck: PathBuf,
        /// Dotted path of the parameter, e.g. `device.boundary.contacts.0.bias`.
        #[arg(long)]
        param: String,
        /// Comma-separated values; may be empty.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        /// Write the table here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a property suite (or `all`) and print a JSON report.
    Verify {
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit(status: ExitStatus) -> ExitCode {
    ExitCode::from(status.code() as u8)
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    exit(e.exit_status())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { deck, out } => {
            let out = out.unwrap_or_else(|| {
                let stem = deck
                    .file_stem()
                    .map_or("run".into(), |s| s.to_string_lossy().into_owned());
                PathBuf::from(format!("{stem}-out"))
            });
            let (status, message) = cmd_run(&deck, &out);
            match status {
                ExitStatus::Complete => println!("{message}"),
                _ => eprintln!("{message}"),
            }
            exit(status)
        }
        Command::Sweep {
            deck,
            param,
            values,
            out,
        } => {
            let result = (|| -> Result<(), CliError> {
                let values = parse_values(&values)?;
                let workers = workers_from_env()?;
                let text =
                    std::fs::read_to_string(&deck).map_err(|e| CliError::Io(format!("{}: {e}", deck.display())))?;
                let table = sweep(&text, &param, &values, workers)?;
                match out {
                    Some(path) => table.write(&path)?,
                    None => print!("{}", table.render()),
                }
                Ok(())
            })();
            match result {
                Ok(()) => exit(ExitStatus::Complete),
                Err(e) => fail(e),
            }
        }
        Command::Verify { suite, seed } => match run_suite(&suite, seed) {
            Ok(reports) => {
                let passed = reports.iter().all(|r| r.passed);
                let json = if reports.len() == 1 {
                    serde_json::to_string_pretty(&reports[0])
                } else {
                    serde_json::to_string_pretty(&reports)
                };
                println!("{}", json.expect("reports serialize"));
                exit(if passed {
                    ExitStatus::Complete
                } else {
                    ExitStatus::Failure
                })
            }
            Err(e) => fail(e),
        },
    }
}
