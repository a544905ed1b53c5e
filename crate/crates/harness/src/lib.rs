//! Experiment harness: TOML configs, multi-seed sweeps over algorithm
//! variants, and aggregate reports (summary tables, learning curves and
//! box-plot data).

pub mod config;
pub mod report;
pub mod stats;
pub mod sweep;

pub use config::{ConfigError, ExperimentConfig, Variant};
pub use report::{report, SummaryRow};
pub use sweep::{run_sweep, LogLevel, RunSummary, SweepError};
