//! `metasurrogate` — train meta-learned surrogates and drive decision
//! loops with them.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use metasurrogate::checkpoint::checkpoint_load;
use metasurrogate::config::ExperimentConfig;
use metasurrogate::{pipelines, report, CliError};

#[derive(Parser)]
#[command(name = "metasurrogate", version, about = "Meta-learned surrogate experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the pipeline described by a TOML experiment config.
    Run { config: PathBuf },
    /// Aggregate a run directory into series and summary CSVs.
    Report { dir: PathBuf },
    /// Print a checkpoint's manifest and per-array statistics.
    Inspect { checkpoint: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> metasurrogate::Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = pipelines::run(&cfg)?;
            println!("ok: outputs in {}", out.display());
            Ok(())
        }
        Command::Report { dir } => {
            let summary = report::report(&dir)?;
            for (method, points, mean, std) in summary {
                println!("{method}: {points} points, final {mean:.6} ± {std:.6}");
            }
            Ok(())
        }
        Command::Inspect { checkpoint } => {
            let ckpt = checkpoint_load(&checkpoint)?;
            println!("format: checkpoint v{}", metasurrogate::checkpoint::FORMAT_VERSION);
            println!(
                "provenance: iters={} seed={} source={}",
                ckpt.provenance.iters, ckpt.provenance.seed, ckpt.provenance.source
            );
            let cfg = serde_json::to_string_pretty(&ckpt.config)
                .map_err(|e| CliError::Other(e.to_string()))?;
            println!("config: {cfg}");
            println!("arrays:");
            for (name, t) in ckpt.params.iter() {
                let data = t.data();
                let mean = data.iter().sum::<f64>() / data.len() as f64;
                let min = data.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                println!(
                    "  {name}: shape {:?}, mean {mean:.4}, min {min:.4}, max {max:.4}",
                    t.shape()
                );
            }
            Ok(())
        }
    }
}
