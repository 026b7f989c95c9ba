use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spgg::experiment::{load_config, parse_values, run_replicates, run_single, run_sweep, SweepSpec};
use spgg::Error;

/// Spatial public goods game experiments.
#[derive(Debug, Parser)]
#[command(name = "spgg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration key; repeatable. Values are read as JSON,
    /// falling back to a plain string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one configuration and write its artifacts.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run a parameter sweep with replicates per value.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Configuration key to vary.
        #[arg(long)]
        param: String,
        /// `start:stop:step` (inclusive) or a comma-separated list.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        /// Sweep directory name under the output root.
        #[arg(long)]
        sweep_id: Option<String>,
    },
    /// Run `n` replicates with derived seeds and report the 95% interval.
    Replicate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short = 'n', long)]
        n: usize,
    },
}

/// 0 success, 1 run failure, 2 configuration error.
fn exit_code(e: &Error) -> ExitCode {
    if e.is_config_error() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn execute(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run { config } => {
            let config = load_config(&config.config, &config.overrides)?;
            let summary = run_single(&config)?;
            println!(
                "run {} seed {} epochs {} final_coop_fraction {:.6}",
                config.run_dir().display(),
                summary.seed,
                summary.epochs_run,
                summary.final_coop_fraction
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            config,
            param,
            values,
            replicates,
            sweep_id,
        } => {
            let base = load_config(&config.config, &config.overrides)?;
            let spec = SweepSpec {
                param,
                values: parse_values(&values)?,
                replicates,
                base,
                sweep_id,
            };
            let outcome = run_sweep(&spec)?;
            println!("sweep {}", spec.dir().display());
            for row in &outcome.rows {
                println!("{} = {}: n {} mean {:.6}", spec.param, row.param_value, row.n, row.mean);
            }
            let failed: Vec<_> = outcome.failures().collect();
            for f in &failed {
                if let Err(e) = &f.outcome {
                    eprintln!(
                        "failed: {} = {} replicate {}: {e}",
                        spec.param, spec.values[f.value_index], f.replicate
                    );
                }
            }
            Ok(if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Replicate { config, n } => {
            let config = load_config(&config.config, &config.overrides)?;
            let stats = run_replicates(&config, n)?;
            println!(
                "replicates {} n {} mean {:.6} std {:.6} ci [{:.6}, {:.6}]",
                config.run_dir().display(),
                stats.n,
                stats.mean,
                stats.sample_std,
                stats.ci_low,
                stats.ci_high
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
