use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mechsim::{load_config, run, write_outputs, AppError, ExperimentKind};

/// Simulates decentralized VCG mechanisms under strategic agents.
#[derive(Parser)]
#[command(name = "mechsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its outputs.
    Run {
        config: PathBuf,
        /// Output directory; MECHSIM_OUT takes precedence.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed, overriding the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for sweep cells (0 uses every core).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Check a configuration and print it with defaults filled in.
    Validate { config: PathBuf },
    /// List the available experiments.
    ListExperiments,
}

const DEFAULT_OUT: &str = "mechsim-out";

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<(), AppError> {
    match command {
        Command::ListExperiments => {
            for kind in ExperimentKind::ALL {
                println!("{:<18} {}", kind.name(), kind.description());
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            let text = serde_json::to_string_pretty(&cfg)
                .map_err(|source| AppError::Json { path: config.clone(), source })?;
            println!("{text}");
            Ok(())
        }
        Command::Run { config, out, seed, jobs } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = std::env::var_os("MECHSIM_OUT")
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
                .or(out)
                .or_else(|| cfg.out.clone())
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            let output = run(cfg, jobs)?;
            write_outputs(&dir, &output)?;
            println!(
                "{}: {} cells written to {}",
                output.manifest.experiment.name(),
                output.results.len(),
                dir.display()
            );
            Ok(())
        }
    }
}
