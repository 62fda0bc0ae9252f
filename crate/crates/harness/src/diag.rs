//! Complexity diagnostics on the states visited by a recorded run.

use std::fs;
use std::path::{Path, PathBuf};

use bandit_core::diagnostics::{complexity_report, ComplexityReport};
use bandit_core::StatePoint;

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::output::{read_trace, trace_file_name};
use crate::runner::run_observed;

pub const DIAG_HEADER: [&str; 9] = [
    "t",
    "lambda",
    "d_eff",
    "info_gain",
    "valko_d",
    "prop1_lhs",
    "prop1_rhs",
    "label",
    "seed",
];

/// Replays `(cfg, seed)` and returns the visited states. When a trace of the
/// same run exists in the output directory, the replayed actions must match
/// it.
pub fn replay_states(cfg: &RunConfig, seed: u64) -> Result<Vec<StatePoint>> {
    let mut states = Vec::with_capacity(cfg.horizon);
    let record = run_observed(cfg, seed, |s, _| states.push(s.clone()))?;
    let trace = cfg.output_dir.join(trace_file_name(&record));
    if trace.exists() {
        let (rows, _) = read_trace(&trace)?;
        let recorded: Vec<usize> = rows.iter().map(|r| r.action).collect();
        let replayed: Vec<usize> = record.steps.iter().map(|r| r.action).collect();
        if recorded != replayed {
            return Err(HarnessError::Config(format!(
                "{} does not match a replay of the current configuration",
                trace.display()
            )));
        }
    }
    states.truncate(record.steps.len());
    Ok(states)
}

/// Reports at `t = every, 2 every, ...` and at the last round.
pub fn checkpoint_reports(cfg: &RunConfig, states: &[StatePoint]) -> Result<Vec<ComplexityReport>> {
    let n = states.len();
    let mut ts: Vec<usize> = (1..=n / cfg.diag_every).map(|k| k * cfg.diag_every).collect();
    if n > 0 && ts.last() != Some(&n) {
        ts.push(n);
    }
    let k_full = cfg.kernel.gram(states, states)?;
    ts.into_iter()
        .map(|t| {
            let k = k_full.view((0, 0), (t, t)).into_owned();
            Ok(complexity_report(&k, cfg.policy.lambda, cfg.kernel.kappa(), t, cfg.horizon)?)
        })
        .collect()
}

/// Appends one row per checkpoint and seed to `diagnostics.csv`.
pub fn run_diagnostics(cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("diagnostics.csv");
    for &seed in &cfg.seeds {
        let states = replay_states(cfg, seed)?;
        let reports = checkpoint_reports(cfg, &states)?;
        append_reports(&path, &cfg.label, seed, &reports)?;
    }
    Ok(path)
}

pub fn append_reports(path: &Path, label: &str, seed: u64, reports: &[ComplexityReport]) -> Result<()> {
    let fresh = !path.exists();
    let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(DIAG_HEADER)?;
    }
    for r in reports {
        w.write_record([
            r.t.to_string(),
            r.lambda.to_string(),
            r.d_eff.to_string(),
            r.info_gain.to_string(),
            r.valko_d.to_string(),
            r.log_det_term.to_string(),
            r.log_det_bound.to_string(),
            label.to_string(),
            seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
