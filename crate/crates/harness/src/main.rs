use std::path::PathBuf;
use std::process::ExitCode;

use cgr_harness::{report, run_sweep, ExperimentConfig, LogLevel, SweepError};
use clap::{Parser, Subcommand};

/// Confidence-gated reward experiments.
#[derive(Parser)]
#[command(name = "cgr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured variant on one seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the first seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Train every (variant, seed) pair and write the reports.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated; overrides the config's seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Aggregate a finished sweep directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

const CONFIG_ERROR: u8 = 1;
const RUN_FAILURE: u8 = 2;

fn load(path: &PathBuf, seeds: Option<Vec<u64>>) -> Result<ExperimentConfig, ExitCode> {
    let mut config = ExperimentConfig::load(path).map_err(|e| {
        eprintln!("config error: {e}");
        ExitCode::from(CONFIG_ERROR)
    })?;
    if let Some(s) = seeds {
        if s.is_empty() {
            eprintln!("config error: --seeds is empty");
            return Err(ExitCode::from(CONFIG_ERROR));
        }
        config.seeds = s;
    }
    Ok(config)
}

fn sweep(config: ExperimentConfig, jobs: usize, out: PathBuf) -> ExitCode {
    let level = match LogLevel::from_env() {
        Ok(l) => l,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    let outcome = run_sweep(&config, &out, jobs, level).and_then(|runs| {
        report(&out, &out)?;
        Ok(runs)
    });
    match outcome {
        Ok(runs) => {
            let failed: Vec<_> = runs.iter().filter(|r| r.error.is_some()).collect();
            for r in &failed {
                eprintln!("{} seed {} failed: {}", r.variant, r.seed, r.error.as_deref().unwrap_or(""));
            }
            if let Ok(table) = std::fs::read_to_string(out.join("summary.md")) {
                print!("{table}");
            }
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(RUN_FAILURE)
            }
        }
        Err(e) => fail(e),
    }
}

fn fail(e: SweepError) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        SweepError::Config(_) | SweepError::LogLevel(_) => ExitCode::from(CONFIG_ERROR),
        _ => ExitCode::from(RUN_FAILURE),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { config, seed, out } => {
            let config = match load(&config, None) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let seed = seed.unwrap_or(config.seeds[0]);
            sweep(ExperimentConfig { seeds: vec![seed], ..config }, 1, out)
        }
        Command::Sweep { config, seeds, jobs, out } => match load(&config, seeds) {
            Ok(c) => sweep(c, jobs, out),
            Err(code) => code,
        },
        Command::Report { input, out } => match report(&input, &out) {
            Ok(_) => {
                if let Ok(table) = std::fs::read_to_string(out.join("summary.md")) {
                    print!("{table}");
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
    }
}
