//! Aggregates a sweep directory into summary tables and plot data.
//!
//! Outputs:
//! - `summary.csv` and `summary.md`: one row per variant with score and
//!   reward-request quantiles
//! - `curves.csv`: `variant,episode,mean_return,ci_low,ci_high`, averaged
//!   over the seeds whose run reached that episode
//! - `boxplot.csv`: `variant,metric,q25,median,q75,min,max` for `score`
//!   and `rewards`

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::stats::{mean_ci, BoxStats};
use crate::sweep::{io_err, run_dir, Manifest, RunSummary, SweepError, MANIFEST};

pub const CURVES_HEADER: &str = "variant,episode,mean_return,ci_low,ci_high";
pub const BOXPLOT_HEADER: &str = "variant,metric,q25,median,q75,min,max";
pub const SUMMARY_HEADER: &str = "variant,seeds,failed,converged,median_score,q25_score,q75_score,min_score,max_score,median_rewards,q25_rewards,q75_rewards,min_rewards,max_rewards";

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub seeds: usize,
    pub failed: usize,
    pub converged: usize,
    pub score: BoxStats,
    pub rewards: BoxStats,
}

/// One variant's finished runs.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantRuns {
    pub name: String,
    pub summaries: Vec<RunSummary>,
    /// Episode returns per successful run, aligned with the successful
    /// entries of `summaries`.
    pub returns: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct EpisodeRow {
    #[allow(dead_code)]
    episode: usize,
    #[serde(rename = "return")]
    episode_return: f64,
}

fn read_returns(path: &Path) -> Result<Vec<f64>, SweepError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| SweepError::Io {
        path: path.display().to_string(),
        source: e.into(),
    })?;
    reader
        .deserialize::<EpisodeRow>()
        .map(|row| {
            row.map(|r| r.episode_return).map_err(|e| SweepError::Io {
                path: path.display().to_string(),
                source: e.into(),
            })
        })
        .collect()
}

fn read_summary(path: &Path) -> Result<RunSummary, SweepError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads every run listed in the sweep manifest.
pub fn load(dir: &Path) -> Result<Vec<VariantRuns>, SweepError> {
    let path = dir.join(MANIFEST);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&path).map_err(io_err(&path))?)?;
    manifest
        .variants
        .iter()
        .map(|name| {
            let mut runs = VariantRuns {
                name: name.clone(),
                summaries: Vec::new(),
                returns: Vec::new(),
            };
            for &seed in &manifest.seeds {
                let rd = run_dir(dir, name, seed);
                let summary = read_summary(&rd.join("run.json"))?;
                if summary.error.is_none() {
                    runs.returns.push(read_returns(&rd.join("episodes.csv"))?);
                }
                runs.summaries.push(summary);
            }
            Ok(runs)
        })
        .collect()
}

pub fn summarize(runs: &VariantRuns) -> SummaryRow {
    let ok: Vec<&RunSummary> = runs.summaries.iter().filter(|s| s.error.is_none()).collect();
    let scores: Vec<f64> = ok.iter().filter_map(|s| s.score).collect();
    let rewards: Vec<f64> = ok.iter().map(|s| s.rewards_to_converge as f64).collect();
    SummaryRow {
        variant: runs.name.clone(),
        seeds: runs.summaries.len(),
        failed: runs.summaries.len() - ok.len(),
        converged: ok.iter().filter(|s| s.converged).count(),
        score: BoxStats::of(&scores),
        rewards: BoxStats::of(&rewards),
    }
}

/// Mean learning curve with its 95% interval, per episode index.
pub fn curve(runs: &VariantRuns) -> Vec<(usize, f64, f64, f64)> {
    let longest = runs.returns.iter().map(Vec::len).max().unwrap_or(0);
    (0..longest)
        .map(|ep| {
            let xs: Vec<f64> = runs.returns.iter().filter_map(|r| r.get(ep).copied()).collect();
            let (m, lo, hi) = mean_ci(&xs);
            (ep, m, lo, hi)
        })
        .collect()
}

fn box_line(variant: &str, metric: &str, b: &BoxStats) -> String {
    format!(
        "{variant},{metric},{},{},{},{},{}",
        b.q25, b.median, b.q75, b.min, b.max
    )
}

/// Writes the summary, curve and box-plot files for the sweep in `input`
/// into `out`. Returns the summary rows in config order.
pub fn report(input: &Path, out: &Path) -> Result<Vec<SummaryRow>, SweepError> {
    let all = load(input)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let rows: Vec<SummaryRow> = all.iter().map(summarize).collect();

    let mut summary = format!("{SUMMARY_HEADER}\n");
    let mut boxes = format!("{BOXPLOT_HEADER}\n");
    let mut table = String::from("| Variant | Median Score | # of Rewards | Converged |\n|---|---|---|---|\n");
    for r in &rows {
        let (s, w) = (&r.score, &r.rewards);
        writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.variant, r.seeds, r.failed, r.converged, s.median, s.q25, s.q75, s.min, s.max, w.median, w.q25,
            w.q75, w.min, w.max
        )
        .unwrap();
        writeln!(boxes, "{}", box_line(&r.variant, "score", s)).unwrap();
        writeln!(boxes, "{}", box_line(&r.variant, "rewards", w)).unwrap();
        writeln!(
            table,
            "| {} | {} | {} | {}/{} |",
            r.variant,
            s.median,
            w.median,
            r.converged,
            r.seeds - r.failed
        )
        .unwrap();
    }

    let mut curves = format!("{CURVES_HEADER}\n");
    for runs in &all {
        for (ep, m, lo, hi) in curve(runs) {
            writeln!(curves, "{},{ep},{m},{lo},{hi}", runs.name).unwrap();
        }
    }

    let files: BTreeMap<&str, String> = [
        ("summary.csv", summary),
        ("summary.md", table),
        ("boxplot.csv", boxes),
        ("curves.csv", curves),
    ]
    .into_iter()
    .collect();
    for (name, body) in files {
        let path = out.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(rows)
}
