//! Runs every (variant, seed) pair and writes per-run logs.
//!
//! Layout under the output directory:
//!
//! ```text
//! sweep.json                      variants and seeds, in config order
//! <variant>/seed-<s>/episodes.csv
//! <variant>/seed-<s>/steps.csv     only with CGR_LOG=info or trace
//! <variant>/seed-<s>/run.json
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cgr_core::trainer::{RunResult, RunState, TrainError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, Variant};

pub const STEPS_HEADER: &str = "episode,step,action,requested,fused_conf,reg_mult,n,reward_or_imputed,source";
pub const EPISODES_HEADER: &str = "episode,return,steps,requests,cum_requests";

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to build worker pool: {0}")]
    Pool(String),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("CGR_LOG must be quiet, info or trace, got {0:?}")]
    LogLevel(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SweepError + '_ {
    move |source| SweepError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// How much each run writes, from `CGR_LOG`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub enum LogLevel {
    /// Episode log and run summary only.
    #[default]
    Quiet,
    /// Adds the per-step log.
    Info,
    /// Adds one progress line per episode on stderr.
    Trace,
}

impl LogLevel {
    pub fn parse(s: &str) -> Result<Self, SweepError> {
        match s {
            "" | "quiet" => Ok(LogLevel::Quiet),
            "info" => Ok(LogLevel::Info),
            "trace" => Ok(LogLevel::Trace),
            other => Err(SweepError::LogLevel(other.to_string())),
        }
    }

    pub fn from_env() -> Result<Self, SweepError> {
        Self::parse(&std::env::var("CGR_LOG").unwrap_or_default())
    }
}

/// Summary of one run, stored as `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: String,
    pub seed: u64,
    pub error: Option<String>,
    pub converged: bool,
    pub convergence_episode: Option<usize>,
    /// Absent for failed runs.
    pub score: Option<f64>,
    pub rewards_to_converge: u64,
    pub total_requests: u64,
    pub total_steps: u64,
    pub episodes: usize,
    pub agent_updates: u64,
}

impl RunSummary {
    fn of(variant: &str, seed: u64, result: &RunResult) -> Self {
        RunSummary {
            variant: variant.to_string(),
            seed,
            error: None,
            converged: result.converged(),
            convergence_episode: result.convergence.map(|c| c.episode),
            score: Some(result.score()),
            rewards_to_converge: result.rewards_to_converge(),
            total_requests: result.total_requests,
            total_steps: result.total_steps,
            episodes: result.episodes.len(),
            agent_updates: result.agent_updates,
        }
    }

    fn failed(variant: &str, seed: u64, error: String) -> Self {
        RunSummary {
            variant: variant.to_string(),
            seed,
            error: Some(error),
            converged: false,
            convergence_episode: None,
            score: None,
            rewards_to_converge: 0,
            total_requests: 0,
            total_steps: 0,
            episodes: 0,
            agent_updates: 0,
        }
    }
}

/// Written at the sweep root so reports keep the config's variant order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub variants: Vec<String>,
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
}

pub const MANIFEST: &str = "sweep.json";

pub fn run_dir(out: &Path, variant: &str, seed: u64) -> PathBuf {
    out.join(variant).join(format!("seed-{seed}"))
}

/// Trains one (variant, seed) pair in memory.
pub fn run_one(
    config: &ExperimentConfig,
    variant: &Variant,
    seed: u64,
    level: LogLevel,
) -> Result<RunResult, TrainError> {
    let mut tc = config.trainer_config(variant);
    tc.log_steps = level >= LogLevel::Info;
    let env = config
        .make_env(seed)
        .map_err(|e| TrainError::Config(e.to_string()))?;
    let mut run = RunState::new(tc, env, seed)?;
    let cap = run.config().max_episodes;
    let stop = run.config().stop_at_convergence;
    for _ in 0..cap {
        let m = run.run_episode()?;
        if level == LogLevel::Trace {
            eprintln!(
                "{} seed {} episode {} return {} requests {}",
                variant.name, seed, m.episode, m.episode_return, m.cum_requests
            );
        }
        if stop && run.detector().convergence().is_some() {
            break;
        }
    }
    Ok(run.into_result())
}

fn write_csv_lines(path: &Path, header: &str, lines: impl Iterator<Item = String>) -> Result<(), SweepError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "{header}").map_err(io_err(path))?;
    for line in lines {
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes the logs and summary of one finished run.
pub fn write_run(dir: &Path, summary: &RunSummary, result: Option<&RunResult>) -> Result<(), SweepError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    if let Some(r) = result {
        write_csv_lines(
            &dir.join("episodes.csv"),
            EPISODES_HEADER,
            r.episodes.iter().map(|e| {
                format!(
                    "{},{},{},{},{}",
                    e.episode, e.episode_return, e.steps, e.requests, e.cum_requests
                )
            }),
        )?;
        if !r.steps.is_empty() {
            write_csv_lines(
                &dir.join("steps.csv"),
                STEPS_HEADER,
                r.steps.iter().map(|s| {
                    format!(
                        "{},{},{},{},{},{},{},{},{}",
                        s.episode,
                        s.step,
                        s.action,
                        s.requested,
                        s.fused_conf,
                        s.reg_mult,
                        s.n,
                        s.reward_or_imputed,
                        s.source.as_str()
                    )
                }),
            )?;
        }
    }
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(summary)?).map_err(io_err(&path))
}

/// Runs the sweep on `jobs` worker threads and writes every run's logs.
/// Failed runs are recorded in their `run.json` and do not stop the
/// sweep. Returns the summaries in (variant, seed) config order.
pub fn run_sweep(
    config: &ExperimentConfig,
    out: &Path,
    jobs: usize,
    level: LogLevel,
) -> Result<Vec<RunSummary>, SweepError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let manifest = Manifest {
        variants: config.variants.iter().map(|v| v.name.clone()).collect(),
        seeds: config.seeds.clone(),
        config: config.clone(),
    };
    let path = out.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&path))?;

    let pairs: Vec<(&Variant, u64)> = config
        .variants
        .iter()
        .flat_map(|v| config.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SweepError::Pool(e.to_string()))?;
    pool.install(|| {
        pairs
            .par_iter()
            .map(|&(variant, seed)| {
                let dir = run_dir(out, &variant.name, seed);
                match run_one(config, variant, seed, level) {
                    Ok(result) => {
                        let summary = RunSummary::of(&variant.name, seed, &result);
                        write_run(&dir, &summary, Some(&result))?;
                        Ok(summary)
                    }
                    Err(e) => {
                        let summary = RunSummary::failed(&variant.name, seed, e.to_string());
                        write_run(&dir, &summary, None)?;
                        Ok(summary)
                    }
                }
            })
            .collect()
    })
}
