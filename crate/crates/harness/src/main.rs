use std::path::PathBuf;
use std::process::ExitCode;

use bandit_lab::config::ConfigFile;
use bandit_lab::diag::run_diagnostics;
use bandit_lab::output::emit_outputs;
use bandit_lab::runner::{run_single, run_sweep, summarize};
use bandit_lab::{HarnessError, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bandit-lab", version, about = "Kernelized contextual bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the base configuration for each of its seeds.
    Run(Common),
    /// Run every variant of the configuration for each seed.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Concurrent cells; capped by BANDIT_LAB_THREADS.
        #[arg(long, default_value_t = default_parallelism())]
        parallelism: usize,
    },
    /// Replay the base configuration and append complexity diagnostics.
    Diag(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long = "T")]
    horizon: Option<usize>,
    /// Comma-separated list or `lo..hi`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any other `section.key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl Common {
    fn load(&self) -> Result<ConfigFile> {
        let mut file = ConfigFile::load(&self.config)?;
        let pairs = [
            ("policy.name", self.policy.clone()),
            ("policy.lambda", self.lambda.map(|v| v.to_string())),
            ("policy.mu", self.mu.map(|v| v.to_string())),
            ("run.horizon", self.horizon.map(|v| v.to_string())),
            ("run.seeds", self.seeds.clone()),
            ("env.family", self.env.clone()),
            ("run.output_dir", self.out.as_ref().map(|p| p.display().to_string())),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                file.set(key, v)?;
            }
        }
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                return Err(HarnessError::Config(format!("--set expects KEY=VALUE, got `{kv}`")));
            };
            file.set(k.trim(), v.trim())?;
        }
        Ok(file)
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.load()?.base_config()?;
            let records = cfg
                .seeds
                .iter()
                .map(|&s| run_single(&cfg, s))
                .collect::<Result<Vec<_>>>()?;
            emit_outputs(&records, &cfg.output_dir)?;
            for r in &records {
                match &r.error {
                    None => println!(
                        "{} seed={} regret={:.4} wall_s={:.4} m={}",
                        r.label,
                        r.seed,
                        r.total_regret(),
                        r.total_wall_time_s(),
                        r.final_dictionary_size()
                    ),
                    Some(e) => eprintln!("error kind=run-aborted label={} seed={} message={e:?}", r.label, r.seed),
                }
            }
            Ok(records.iter().all(|r| r.is_ok()))
        }
        Command::Sweep { common, parallelism } => {
            let configs = common.load()?.resolve()?;
            let records = run_sweep(&configs, parallelism)?;
            let out = &configs[0].output_dir;
            emit_outputs(&records, out)?;
            for row in summarize(&records) {
                println!(
                    "{} policy={} status={} regret={:.4}±{:.4} wall_s={:.4}±{:.4} m={:.1}",
                    row.label,
                    row.policy,
                    row.status(),
                    row.regret_mean,
                    row.regret_std,
                    row.wall_mean_s,
                    row.wall_std_s,
                    row.final_m_mean
                );
            }
            Ok(true)
        }
        Command::Diag(common) => {
            let cfg = common.load()?.base_config()?;
            let path = run_diagnostics(&cfg)?;
            println!("{}", path.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
            ExitCode::from(2)
        }
    }
}
