use std::time::Instant;

use bandit_core::environments::Environment;
use bandit_core::{KernelSpec, StatePoint};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{config_err, HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub t: usize,
    pub action: usize,
    pub reward: f64,
    pub regret: f64,
    pub cumulative_regret: f64,
    pub dictionary_size: usize,
    pub wall_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryDump {
    pub anchors: Vec<StatePoint>,
    pub probs: Vec<f64>,
    pub inserted_at: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub label: String,
    pub policy: String,
    pub seed: u64,
    pub steps: Vec<StepRow>,
    /// Set when the run aborted; `steps` then holds the rounds completed.
    pub error: Option<String>,
    pub dictionary: Option<DictionaryDump>,
}

impl RunRecord {
    pub fn total_regret(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cumulative_regret)
    }

    pub fn total_wall_time_s(&self) -> f64 {
        self.steps.iter().map(|s| s.wall_ns as f64).sum::<f64>() * 1e-9
    }

    pub fn final_dictionary_size(&self) -> usize {
        self.steps.last().map_or(0, |s| s.dictionary_size)
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Runs the `T`-round loop for one seed. Only configuration problems are
/// returned as errors; a failing policy step ends the run early and is
/// recorded in [`RunRecord::error`].
pub fn run_single(cfg: &RunConfig, seed: u64) -> Result<RunRecord> {
    run_observed(cfg, seed, |_, _| {})
}

/// Same as [`run_single`], also handing each played state and its reward to
/// `observe`.
pub fn run_observed(
    cfg: &RunConfig,
    seed: u64,
    mut observe: impl FnMut(&StatePoint, f64),
) -> Result<RunRecord> {
    let seeds = cfg.seeds_for(seed);
    let mut env_spec = cfg.env.clone();
    env_spec.seed = seeds.env;
    let mut env = Environment::new(env_spec)?;
    check_kernel_dims(&cfg.kernel, cfg.env.context_dim)?;
    let mut policy = cfg.policy.build(&cfg.kernel, cfg.horizon, seeds, cfg.refactor_every)?;
    let actions = env.action_grid().to_vec();

    let mut record = RunRecord {
        label: cfg.label.clone(),
        policy: policy.name().to_string(),
        seed,
        steps: Vec::with_capacity(cfg.horizon),
        error: None,
        dictionary: None,
    };
    let mut cumulative = 0.0;
    for t in 1..=cfg.horizon {
        let x = env.sample_context();
        let start = Instant::now();
        let chosen = policy.choose(&x, &actions);
        let mut elapsed = start.elapsed();
        let action = match chosen {
            Ok(a) => a,
            Err(e) => {
                record.error = Some(format!("t={t}: {e}"));
                break;
            }
        };
        let out = env.step(&x, action)?;
        let state = StatePoint::new(x, actions[action].clone())?;
        observe(&state, out.reward);
        let start = Instant::now();
        let updated = policy.update(state, out.reward);
        elapsed += start.elapsed();
        if let Err(e) = updated {
            record.error = Some(format!("t={t}: {e}"));
            break;
        }
        let regret = out.regret();
        cumulative += regret;
        record.steps.push(StepRow {
            t,
            action,
            reward: out.reward,
            regret,
            cumulative_regret: cumulative,
            dictionary_size: policy.dictionary_size(),
            wall_ns: elapsed.as_nanos() as u64,
        });
    }
    if cfg.dump_dictionary {
        record.dictionary = policy.dictionary().map(|d| DictionaryDump {
            anchors: d.anchors().to_vec(),
            probs: d.probs().to_vec(),
            inserted_at: d.inserted_at().to_vec(),
        });
    }
    Ok(record)
}

fn check_kernel_dims(kernel: &KernelSpec, context_dim: usize) -> Result<()> {
    let probe = StatePoint::new(vec![0.0; context_dim], vec![0.0])?;
    kernel.eval(&probe, &probe)?;
    Ok(())
}

/// Threads used by a sweep: `requested`, capped by `BANDIT_LAB_THREADS`.
pub fn effective_parallelism(requested: usize) -> usize {
    let cap = std::env::var("BANDIT_LAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    let n = requested.max(1);
    cap.map_or(n, |c| n.min(c))
}

/// Runs every `(config, seed)` cell, at most `parallelism` at a time. Records
/// come back in config order, then seed order. A cell that cannot start is
/// returned as an empty record carrying the error.
pub fn run_sweep(configs: &[RunConfig], parallelism: usize) -> Result<Vec<RunRecord>> {
    if configs.is_empty() {
        return config_err("sweep needs at least one configuration");
    }
    if let Some(c) = configs.iter().find(|c| c.seeds.is_empty()) {
        return Err(HarnessError::Core(bandit_core::BanditError::InvalidArgument(format!(
            "configuration `{}` has no seeds",
            c.label
        ))));
    }
    let cells: Vec<(&RunConfig, u64)> = configs
        .iter()
        .flat_map(|c| c.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(effective_parallelism(parallelism))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        cells
            .par_iter()
            .map(|&(cfg, seed)| {
                run_single(cfg, seed).unwrap_or_else(|e| RunRecord {
                    label: cfg.label.clone(),
                    policy: cfg.policy.kind.as_str().to_string(),
                    seed,
                    steps: Vec::new(),
                    error: Some(e.to_string()),
                    dictionary: None,
                })
            })
            .collect()
    }))
}

/// Aggregate of all seeds of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub policy: String,
    pub seeds: usize,
    pub failed: usize,
    pub regret_mean: f64,
    pub regret_std: f64,
    pub wall_mean_s: f64,
    pub wall_std_s: f64,
    pub final_m_mean: f64,
}

impl SummaryRow {
    pub fn status(&self) -> &'static str {
        match self.failed {
            0 => "ok",
            f if f == self.seeds => "failed",
            _ => "partial",
        }
    }
}

/// Sample mean and (n-1) standard deviation; 0 spread for fewer than two values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// One row per distinct label, in order of first appearance.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    labels(records)
        .into_iter()
        .map(|label| {
            let group: Vec<&RunRecord> = records.iter().filter(|r| r.label == label).collect();
            let ok: Vec<&RunRecord> = group.iter().copied().filter(|r| r.is_ok()).collect();
            let regrets: Vec<f64> = ok.iter().map(|r| r.total_regret()).collect();
            let walls: Vec<f64> = ok.iter().map(|r| r.total_wall_time_s()).collect();
            let ms: Vec<f64> = ok.iter().map(|r| r.final_dictionary_size() as f64).collect();
            let (regret_mean, regret_std) = mean_std(&regrets);
            let (wall_mean_s, wall_std_s) = mean_std(&walls);
            SummaryRow {
                label: label.clone(),
                policy: group[0].policy.clone(),
                seeds: group.len(),
                failed: group.len() - ok.len(),
                regret_mean,
                regret_std,
                wall_mean_s,
                wall_std_s,
                final_m_mean: mean_std(&ms).0,
            }
        })
        .collect()
}

pub(crate) fn labels(records: &[RunRecord]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in records {
        if !out.contains(&r.label) {
            out.push(r.label.clone());
        }
    }
    out
}

/// Per-round mean and standard deviation across the completed seeds of
/// `label`: cumulative regret and cumulative wall time in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    pub regret_mean: Vec<f64>,
    pub regret_std: Vec<f64>,
    pub time_mean: Vec<f64>,
    pub time_std: Vec<f64>,
}

pub fn curves(records: &[RunRecord], label: &str) -> Curves {
    let ok: Vec<&RunRecord> = records.iter().filter(|r| r.label == label && r.is_ok()).collect();
    let len = ok.iter().map(|r| r.steps.len()).min().unwrap_or(0);
    let mut out = Curves {
        regret_mean: Vec::with_capacity(len),
        regret_std: Vec::with_capacity(len),
        time_mean: Vec::with_capacity(len),
        time_std: Vec::with_capacity(len),
    };
    let mut clocks = vec![0.0; ok.len()];
    for i in 0..len {
        let regrets: Vec<f64> = ok.iter().map(|r| r.steps[i].cumulative_regret).collect();
        for (c, r) in clocks.iter_mut().zip(&ok) {
            *c += r.steps[i].wall_ns as f64 * 1e-9;
        }
        let (m, s) = mean_std(&regrets);
        out.regret_mean.push(m);
        out.regret_std.push(s);
        let (m, s) = mean_std(&clocks);
        out.time_mean.push(m);
        out.time_std.push(s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigFile;

    fn cfg(text: &str) -> RunConfig {
        ConfigFile::parse(text).unwrap().base_config().unwrap()
    }

    #[test]
    fn single_round() {
        let c = cfg("run.horizon = 1\npolicy.name = kucb\npolicy.lambda = 1");
        let r = run_single(&c, 0).unwrap();
        assert_eq!(r.steps.len(), 1);
        assert_eq!(r.steps[0].cumulative_regret, r.steps[0].regret);
        assert_eq!(r.steps[0].t, 1);
    }

    #[test]
    fn random_policy_accumulates_regret_linearly() {
        let c = cfg("run.horizon = 400\npolicy.name = random\nenv.family = chessboard\nenv.noise_sigma = 0");
        let r = run_single(&c, 1).unwrap();
        let window = r.steps[399].cumulative_regret - r.steps[199].cumulative_regret;
        assert!(window > 0.1 * 200.0);
        assert!(r.steps.windows(2).all(|w| w[1].cumulative_regret >= w[0].cumulative_regret));
    }

    #[test]
    fn policy_failure_is_recorded() {
        // rank-3 linear kernel with a vanishing ridge
        let c = cfg("run.horizon = 200\npolicy.name = kucb\npolicy.lambda = 1e-300\nkernel.family = linear\nenv.family = linear_sanity");
        let r = run_single(&c, 0).unwrap();
        assert!(r.error.is_some());
        assert!(r.steps.len() < 200);
    }

    #[test]
    fn dictionary_grows_for_ekucb() {
        let c = cfg("run.horizon = 100\npolicy.name = ekucb\npolicy.lambda = 1\npolicy.mu = 1\npolicy.gamma = 2\nrun.dump_dictionary = true");
        let r = run_single(&c, 2).unwrap();
        assert!(r.is_ok());
        assert!(r.steps.windows(2).all(|w| w[1].dictionary_size >= w[0].dictionary_size));
        let dump = r.dictionary.clone().unwrap();
        assert_eq!(dump.anchors.len(), r.final_dictionary_size());
    }

    #[test]
    fn sweep_is_independent_of_parallelism() {
        let file = ConfigFile::parse(
            "run.horizon = 60\nrun.seeds = 0..3\npolicy.lambda = 1\nvariant.a.policy.name = kucb\nvariant.b.policy.name = ekucb\nvariant.c.policy.name = random",
        )
        .unwrap();
        let configs = file.resolve().unwrap();
        let one = run_sweep(&configs, 1).unwrap();
        let four = run_sweep(&configs, 4).unwrap();
        assert_eq!(one.len(), 9);
        let strip = |rs: &[RunRecord]| -> Vec<(String, u64, Vec<usize>, f64)> {
            rs.iter()
                .map(|r| (r.label.clone(), r.seed, r.steps.iter().map(|s| s.action).collect(), r.total_regret()))
                .collect()
        };
        assert_eq!(strip(&one), strip(&four));
        let a = summarize(&one);
        let b = summarize(&four);
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.regret_mean, y.regret_mean);
            assert_eq!(x.seeds, 3);
        }
    }

    #[test]
    fn sweep_rejects_empty_input() {
        assert!(run_sweep(&[], 1).is_err());
        let mut c = cfg("run.horizon = 5");
        c.seeds.clear();
        assert!(matches!(
            run_sweep(&[c], 1),
            Err(HarnessError::Core(bandit_core::BanditError::InvalidArgument(_)))
        ));
    }

    #[test]
    fn std_over_three_seeds() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }
}
