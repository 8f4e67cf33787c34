use clap::{Parser, Subcommand};
use mmprl_cli::*;
use std::path::PathBuf;
use std::process::ExitCode;

/// Behavior-performance map experiments: build maps with parallel actor-critic
/// learners, compare against the random-perturbation baseline, and recover
/// from injected damage by Gaussian-process search over the map.
#[derive(Parser)]
#[command(name = "mmprl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Populate a behavior-performance map with multiple learner agents.
    CreateMap {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; 0 means one per agent. Use 1 for byte-reproducible runs.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Populate a map with the random-perturbation baseline at the same budget.
    BaselineMapelites {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search a stored map for a policy that works under the configured damage.
    Adapt {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Batch mode: run this many seeded adaptations and emit per-seed rows.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long, default_value_t = 50)]
        max_trials: usize,
    },
    /// Deterministically evaluate one stored cell under the configured damage.
    Eval {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Either "best" or comma-separated coordinates like "4,4,3,4,4,4".
        #[arg(long)]
        cell: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the full episode trace CSV here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Dump the occupied cells of an archive file as CSV.
    Export {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> mmprl::Result<()> {
    match cli.command {
        Command::CreateMap {
            config,
            seed,
            out,
            workers,
        } => {
            let run = cmd_create_map(&config, seed, &out, workers)?;
            println!(
                "archive {} (digest {}) occupied={} best={}",
                run.archive.display(),
                run.archive_digest,
                run.stats.occupied,
                run.stats.max_perf.unwrap_or(f64::NAN)
            );
        }
        Command::BaselineMapelites { config, seed, out } => {
            let run = cmd_baseline(&config, seed, &out)?;
            println!(
                "archive {} (digest {}) occupied={} best={}",
                run.archive.display(),
                run.archive_digest,
                run.stats.occupied,
                run.stats.max_perf.unwrap_or(f64::NAN)
            );
        }
        Command::Adapt {
            archive,
            config,
            seed,
            out,
            seeds,
            max_trials,
        } => match seeds {
            Some(n) => {
                let path = cmd_adapt_batch(&archive, &config, seed, n, &out, max_trials)?;
                println!("batch results in {}", path.display());
            }
            None => {
                let report = cmd_adapt(&archive, &config, seed, &out, max_trials)?;
                println!(
                    "trials={} best={} at {} (stopped_early={})",
                    report.outcome.trials,
                    report.outcome.best_performance,
                    report.outcome.best_coords,
                    report.outcome.stopped_early
                );
            }
        },
        Command::Eval {
            archive,
            config,
            cell,
            seed,
            trace,
        } => {
            let result = cmd_eval(&archive, &config, &cell, seed, trace.as_deref())?;
            println!("{}", result.distance);
        }
        Command::Export { archive, out } => {
            let n = cmd_export(&archive, &out)?;
            println!("exported {n} cells to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
