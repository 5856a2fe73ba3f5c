use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use mvgmp_cli::commands;
use mvgmp_cli::config::Config;
use mvgmp_core::Execution;

/// Reliability analysis and group-management simulation for multi-view
/// video multicast with view synthesis.
#[derive(Debug, Parser)]
#[command(name = "mvgmp", version)]
struct Cli {
    /// TOML config; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Comma-separated seeds (default: `scenario.seed`).
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Config override `section.key=value`, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate the closed forms.
    Analyze,
    /// Check closed forms against enumeration and simulation.
    Validate,
    /// Run the dynamic scenario once per seed.
    Simulate,
    /// Run the scenario for each value of one config key.
    Sweep {
        /// Key to vary, e.g. `range` or `scenario.arrival`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    let config = Config::load(cli.config.as_deref(), &cli.overrides)?;
    let execution = if cli.sequential { Execution::Sequential } else { Execution::default() };
    let seeds = if cli.seeds.is_empty() { vec![config.scenario.seed] } else { cli.seeds };
    match cli.command {
        Command::Analyze => {
            for path in commands::analyze(&config, &cli.out)? {
                println!("{}", path.display());
            }
        }
        Command::Validate => {
            let ok = commands::validate(&config, &cli.out, execution)?;
            println!("{}", cli.out.join("validation.csv").display());
            if !ok {
                eprintln!("validation failed: see rows with pass=false");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Simulate => {
            let agg = commands::simulate(&config, &seeds, &cli.out, execution)?;
            println!(
                "mvgmp {:.3} ms, baseline {:.3} ms, ratio {:.4} +/- {:.4} over {} seeds",
                agg.mvgmp_channel_time.0, agg.baseline_channel_time.0, agg.ratio.0, agg.ratio.1, agg.seeds
            );
        }
        Command::Sweep { param, values } => {
            for (value, agg) in commands::sweep(&config, &param, &values, &seeds, &cli.out, execution)? {
                println!(
                    "{param}={value}: mvgmp {:.3} ms, baseline {:.3} ms, ratio {:.4}",
                    agg.mvgmp_channel_time.0, agg.baseline_channel_time.0, agg.ratio.0
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
