use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use giw::error::Error;
use giw::experiment::{run, verify, verify_line, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "giw",
    about = "Distribution-shift experiments with generalized importance weighting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured (method, seed) grid and write metric artifacts.
    Run {
        /// Path to a key = value experiment config.
        config: PathBuf,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Added to every configured seed.
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Check the risk-consistency relations on the canonical case specs.
    Verify {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(Error::Config { line, message }) => {
            eprintln!("config error at line {line}: {message}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: Cli) -> giw::Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed_offset,
        } => {
            let cfg = ExperimentConfig::parse_file(&config)?;
            let summary = run(&cfg, out.as_deref(), seed_offset)?;
            for (method, mean, std) in &summary.rows {
                println!(
                    "{}: last-10-epoch accuracy {:.4} +/- {:.4}",
                    method.tag(),
                    mean,
                    std
                );
            }
            println!("{} file(s) written", summary.files_written);
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            config,
            out,
            seed_offset,
        } => {
            let cfg = ExperimentConfig::parse_file(&config)?;
            let outcomes = verify(&cfg, out.as_deref(), seed_offset)?;
            let mut all = true;
            for o in &outcomes {
                println!("{}", verify_line(o));
                all &= o.all_pass;
            }
            if all {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(3))
            }
        }
    }
}
