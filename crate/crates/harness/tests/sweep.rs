use std::fs;
use std::path::Path;

use cgr_harness::report::{BOXPLOT_HEADER, CURVES_HEADER};
use cgr_harness::sweep::{LogLevel, EPISODES_HEADER, STEPS_HEADER};
use cgr_harness::{report, run_sweep, ExperimentConfig};

fn small_config(extra: &str) -> ExperimentConfig {
    let seeds = if extra.contains("seeds") { "" } else { "seeds = [1, 2, 3]\n" };
    ExperimentConfig::from_str(&format!("env = \"keylock-small\"\nepisodes = 3\n{seeds}{extra}"))
    .unwrap()
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn two_variants_three_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config("variants = [\"dqn\", \"ae+re-hyper\"]");
    let runs = run_sweep(&config, dir.path(), 2, LogLevel::Quiet).unwrap();
    assert_eq!(runs.len(), 6);
    assert!(runs.iter().all(|r| r.error.is_none()));
    let names: Vec<_> = runs.iter().map(|r| (r.variant.as_str(), r.seed)).collect();
    assert_eq!(
        names,
        [("dqn", 1), ("dqn", 2), ("dqn", 3), ("ae+re-hyper", 1), ("ae+re-hyper", 2), ("ae+re-hyper", 3)]
    );
    for r in &runs {
        let rd = dir.path().join(&r.variant).join(format!("seed-{}", r.seed));
        let episodes = read(&rd.join("episodes.csv"));
        assert_eq!(episodes.lines().next(), Some(EPISODES_HEADER));
        assert_eq!(episodes.lines().count(), 4);
        assert!(!rd.join("steps.csv").exists());
    }
    let rows = report(dir.path(), dir.path()).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].variant, "dqn");
    assert_eq!(rows[1].variant, "ae+re-hyper");
    assert!(rows.iter().all(|r| r.seeds == 3 && r.failed == 0));
    // Ungated runs request every reward.
    let dqn: Vec<_> = runs.iter().filter(|r| r.variant == "dqn").collect();
    assert!(dqn.iter().all(|r| r.total_requests == r.total_steps));
    let curves = read(&dir.path().join("curves.csv"));
    assert_eq!(curves.lines().next(), Some(CURVES_HEADER));
    assert_eq!(curves.lines().count(), 1 + 2 * 3);
    let boxes = read(&dir.path().join("boxplot.csv"));
    assert_eq!(boxes.lines().next(), Some(BOXPLOT_HEADER));
    assert_eq!(boxes.lines().count(), 1 + 2 * 2);
}

#[test]
fn single_seed_interval_is_a_point() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config("seeds = [4]").clone();
    run_sweep(&config, dir.path(), 1, LogLevel::Quiet).unwrap();
    report(dir.path(), dir.path()).unwrap();
    let curves = read(&dir.path().join("curves.csv"));
    for line in curves.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[2], f[3]);
        assert_eq!(f[2], f[4]);
    }
}

#[test]
fn step_log_reconstructs_gate_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config("variants = [\"dqn\", \"ae+re-exp\", \"random\", \"constant-hyper\", \"ae\"]\nseeds = [9]");
    run_sweep(&config, dir.path(), 1, LogLevel::Info).unwrap();
    for v in &config.variants {
        let steps = read(&dir.path().join(&v.name).join("seed-9").join("steps.csv"));
        let mut lines = steps.lines();
        assert_eq!(lines.next(), Some(STEPS_HEADER));
        let mut run = 0;
        let mut count = 0;
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            let requested: bool = f[3].parse().unwrap();
            let fused: f64 = f[4].parse().unwrap();
            let mult: f64 = f[5].parse().unwrap();
            let n: u64 = f[6].parse().unwrap();
            assert_eq!(requested, fused * mult <= config.cthresh, "{}: {line}", v.name);
            assert_eq!(n, run);
            run = if requested { 0 } else { run + 1 };
            assert_eq!(f[8], if requested { "env" } else { "model" });
            count += 1;
        }
        assert!(count > 0);
    }
}

#[test]
fn failed_runs_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config("seeds = [1]");
    // Poison the run after validation: a zero-width hidden layer fails
    // when the trainer validates its own config.
    config.hidden = vec![0];
    let runs = run_sweep(&config, dir.path(), 1, LogLevel::Quiet).unwrap();
    assert!(runs[0].error.is_some());
    let rows = report(dir.path(), dir.path()).unwrap();
    assert_eq!(rows[0].failed, 1);
}

#[test]
fn report_needs_a_sweep() {
    let dir = tempfile::tempdir().unwrap();
    assert!(report(dir.path(), dir.path()).is_err());
}
