//! Flat `section.key = value` run configurations.
//!
//! A file holds one base configuration and, optionally, named variants
//! written as `variant.<label>.<section>.<key> = value`. Each variant is the
//! base with its own keys laid on top; `sweep` runs all of them, `run` only
//! the base.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bandit_core::dictionary::{default_delta, default_gamma, KorsParams, DEFAULT_MIN_RESIDUAL};
use bandit_core::environments::{EnvFamily, EnvSpec};
use bandit_core::policies::{CbbKb, CbbkbParams, EkUcb, ExplorationSchedule, KUcb, Policy, RandomPolicy};
use bandit_core::KernelSpec;

use crate::error::{config_err, HarnessError, Result};

const KNOWN_KEYS: &[&str] = &[
    "run.label",
    "run.horizon",
    "run.seeds",
    "run.output_dir",
    "run.dump_dictionary",
    "run.refactor_every",
    "run.env_seed_shift",
    "env.family",
    "env.context_dim",
    "env.action_grid",
    "env.noise_sigma",
    "env.chessboard_cells",
    "env.band_width",
    "kernel.family",
    "kernel.bandwidth",
    "kernel.kappa",
    "kernel.context_bandwidth",
    "kernel.action_bandwidth",
    "policy.name",
    "policy.lambda",
    "policy.mu",
    "policy.gamma",
    "policy.epsilon",
    "policy.delta",
    "policy.beta",
    "policy.norm_bound",
    "policy.accumulation_threshold",
    "policy.min_residual",
    "policy.full_dictionary",
    "diag.every",
];

/// Ordered key-value pairs of one configuration layer.
pub type KeyValues = BTreeMap<String, String>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub base: KeyValues,
    pub variants: Vec<(String, KeyValues)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut file = ConfigFile::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return config_err(format!("line {}: expected `key = value`", lineno + 1));
            };
            let key = key.trim();
            let value = value.trim().to_string();
            let (layer, key) = match key.strip_prefix("variant.") {
                Some(rest) => {
                    let Some((label, key)) = rest.split_once('.') else {
                        return config_err(format!("line {}: variant key needs a label", lineno + 1));
                    };
                    let idx = match file.variants.iter().position(|(l, _)| l == label) {
                        Some(i) => i,
                        None => {
                            file.variants.push((label.to_string(), KeyValues::new()));
                            file.variants.len() - 1
                        }
                    };
                    (&mut file.variants[idx].1, key)
                }
                None => (&mut file.base, key),
            };
            if !KNOWN_KEYS.contains(&key) {
                return config_err(format!("line {}: unknown key `{key}`", lineno + 1));
            }
            if layer.insert(key.to_string(), value).is_some() {
                return config_err(format!("line {}: duplicate key `{key}`", lineno + 1));
            }
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets `key` on the base layer, replacing any value from the file.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return config_err(format!("unknown key `{key}`"));
        }
        self.base.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn base_config(&self) -> Result<RunConfig> {
        RunConfig::from_keys(&self.base, None)
    }

    /// One configuration per variant, or the base alone when there are none.
    pub fn resolve(&self) -> Result<Vec<RunConfig>> {
        if self.variants.is_empty() {
            return Ok(vec![self.base_config()?]);
        }
        let mut labels = std::collections::HashSet::new();
        self.variants
            .iter()
            .map(|(label, layer)| {
                let mut merged = self.base.clone();
                merged.extend(layer.iter().map(|(k, v)| (k.clone(), v.clone())));
                let cfg = RunConfig::from_keys(&merged, Some(label))?;
                if !labels.insert(cfg.label.clone()) {
                    return config_err(format!("duplicate variant label `{}`", cfg.label));
                }
                Ok(cfg)
            })
            .collect()
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    KUcb,
    EkUcb,
    Cbkb,
    Cbbkb,
    Random,
}

impl PolicyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::KUcb => "kucb",
            Self::EkUcb => "ekucb",
            Self::Cbkb => "cbkb",
            Self::Cbbkb => "cbbkb",
            Self::Random => "random",
        }
    }
}

impl FromStr for PolicyKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kucb" => Ok(Self::KUcb),
            "ekucb" => Ok(Self::EkUcb),
            "cbkb" => Ok(Self::Cbkb),
            "cbbkb" => Ok(Self::Cbbkb),
            "random" => Ok(Self::Random),
            "supkernelucb" => config_err("supkernelucb is reserved but not implemented"),
            other => config_err(format!("unknown policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub lambda: f64,
    pub mu: f64,
    /// `None` selects `12 log(T / delta)`.
    pub gamma: Option<f64>,
    pub epsilon: f64,
    /// `None` selects `1 / T^2`.
    pub delta: Option<f64>,
    pub min_residual: f64,
    /// Forces every observed state into the dictionary.
    pub full_dictionary: bool,
    pub beta: ExplorationSchedule,
    pub accumulation_threshold: f64,
}

/// Independent seeds of one run, all derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSet {
    pub env: u64,
    pub policy: u64,
    pub dictionary: u64,
    pub resample: u64,
}

impl SeedSet {
    pub fn derive(seed: u64, env_shift: u64) -> Self {
        Self {
            env: splitmix(seed.wrapping_add(env_shift) ^ 0x656e_7669_726f_6e00),
            policy: splitmix(seed ^ 0x706f_6c69_6379_0000),
            dictionary: splitmix(seed ^ 0x6469_6374_0000_0000),
            resample: splitmix(seed ^ 0x7265_7361_6d70_6c65),
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl PolicyConfig {
    pub fn kors(&self, horizon: usize) -> Result<KorsParams> {
        let delta = self.delta.unwrap_or_else(|| default_delta(horizon));
        let gamma = self.gamma.unwrap_or_else(|| default_gamma(horizon, delta));
        let params = KorsParams::new(self.mu, self.epsilon, gamma, delta)?.with_min_residual(self.min_residual)?;
        Ok(if self.full_dictionary { params.full_dictionary() } else { params })
    }

    pub fn build(
        &self,
        kernel: &KernelSpec,
        horizon: usize,
        seeds: SeedSet,
        refactor_every: Option<usize>,
    ) -> Result<Box<dyn Policy>> {
        let spec = kernel.clone();
        Ok(match self.kind {
            PolicyKind::KUcb => Box::new(
                KUcb::new(spec, self.lambda, self.beta, seeds.policy)?.with_refactor_every(refactor_every),
            ),
            PolicyKind::EkUcb => Box::new(
                EkUcb::new(
                    spec,
                    self.lambda,
                    self.beta,
                    self.kors(horizon)?,
                    seeds.policy,
                    seeds.dictionary,
                )?
                .with_refactor_every(refactor_every),
            ),
            PolicyKind::Cbkb | PolicyKind::Cbbkb => {
                let threshold = match self.kind {
                    PolicyKind::Cbkb => 1.0,
                    _ => self.accumulation_threshold,
                };
                Box::new(CbbKb::new(
                    spec,
                    self.lambda,
                    self.beta,
                    self.kors(horizon)?,
                    CbbkbParams::new(threshold, seeds.resample)?,
                    seeds.policy,
                )?)
            }
            PolicyKind::Random => Box::new(RandomPolicy::new(seeds.policy)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub label: String,
    pub env: EnvSpec,
    pub kernel: KernelSpec,
    pub policy: PolicyConfig,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub dump_dictionary: bool,
    pub refactor_every: Option<usize>,
    /// Added to the run seed before deriving the environment seed only.
    pub env_seed_shift: u64,
    /// Spacing of the checkpoints written by `diag`.
    pub diag_every: usize,
}

struct Reader<'a> {
    keys: &'a KeyValues,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.keys.get(key).map(String::as_str)
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| HarnessError::Config(format!("`{key}`: cannot parse `{v}`"))),
        }
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }
}

pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || HarnessError::Config(format!("cannot parse seeds `{text}`"));
    let text = text.trim();
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        return Ok((lo..hi).collect());
    }
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => config_err(format!("`{key}`: expected a boolean, got `{v}`")),
    }
}

impl RunConfig {
    pub fn from_keys(keys: &KeyValues, variant: Option<&str>) -> Result<Self> {
        let r = Reader { keys };

        let horizon: usize = r.or("run.horizon", 1000)?;
        if horizon == 0 {
            return config_err("run.horizon must be at least 1");
        }
        let seeds = parse_seeds(r.raw("run.seeds").unwrap_or("0"))?;
        if seeds.is_empty() {
            return config_err("run.seeds must not be empty");
        }

        let family: EnvFamily = r.raw("env.family").unwrap_or("bump").parse()?;
        let mut env = EnvSpec::new(family, 0);
        env.context_dim = r.or("env.context_dim", env.context_dim)?;
        env.action_grid = r.or("env.action_grid", env.action_grid)?;
        env.noise_sigma = r.or("env.noise_sigma", env.noise_sigma)?;
        env.chessboard_cells = r.or("env.chessboard_cells", env.chessboard_cells)?;
        env.band_width = r.or("env.band_width", env.band_width)?;
        env.validate()?;

        let bandwidth: f64 = r.or("kernel.bandwidth", 0.2)?;
        let kernel = match r.raw("kernel.family").unwrap_or("gaussian") {
            "gaussian" => KernelSpec::gaussian(bandwidth)?,
            "linear" => {
                let default_kappa = ((env.context_dim + 1) as f64).sqrt();
                KernelSpec::linear(r.or("kernel.kappa", default_kappa)?)?
            }
            "tensor" | "tensor_product" => KernelSpec::tensor_product(
                KernelSpec::gaussian(r.or("kernel.context_bandwidth", bandwidth)?)?,
                KernelSpec::gaussian(r.or("kernel.action_bandwidth", bandwidth)?)?,
            )?,
            other => return config_err(format!("unknown kernel family `{other}`")),
        };

        let kind: PolicyKind = r.raw("policy.name").unwrap_or("ekucb").parse()?;
        let lambda: f64 = r.or("policy.lambda", (horizon as f64).sqrt())?;
        if kind != PolicyKind::Random && !(lambda > 0.0 && lambda.is_finite()) {
            return config_err("policy.lambda must be positive");
        }
        let delta: Option<f64> = r.parse("policy.delta")?;
        let beta = match r.raw("policy.beta").unwrap_or("1.0") {
            "theoretical" => ExplorationSchedule::Theoretical {
                norm_bound: r.or("policy.norm_bound", 1.0)?,
                delta: delta.unwrap_or_else(|| default_delta(horizon)),
                kappa: kernel.kappa(),
            },
            v => ExplorationSchedule::Fixed(
                v.parse()
                    .map_err(|_| HarnessError::Config(format!("`policy.beta`: cannot parse `{v}`")))?,
            ),
        };
        beta.validate()?;
        let policy = PolicyConfig {
            kind,
            lambda,
            mu: r.or("policy.mu", lambda)?,
            gamma: r.parse("policy.gamma")?,
            epsilon: r.or("policy.epsilon", 0.5)?,
            delta,
            min_residual: r.or("policy.min_residual", DEFAULT_MIN_RESIDUAL)?,
            full_dictionary: parse_bool(
                "policy.full_dictionary",
                r.raw("policy.full_dictionary").unwrap_or("false"),
            )?,
            beta,
            accumulation_threshold: r.or("policy.accumulation_threshold", 10.0)?,
        };
        if matches!(kind, PolicyKind::EkUcb | PolicyKind::Cbkb | PolicyKind::Cbbkb) {
            policy.kors(horizon)?;
        }
        if kind == PolicyKind::Cbbkb {
            CbbkbParams::new(policy.accumulation_threshold, 0)?;
        }

        let label = match r.raw("run.label") {
            Some(l) => l.to_string(),
            None => variant.unwrap_or(kind.as_str()).to_string(),
        };
        if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return config_err(format!("label `{label}` may only hold ASCII letters, digits, `_` and `-`"));
        }
        let refactor_every: usize = r.or("run.refactor_every", 0)?;
        let diag_every: usize = r.or("diag.every", (horizon / 10).max(1))?;
        if diag_every == 0 {
            return config_err("diag.every must be positive");
        }

        Ok(Self {
            label,
            env,
            kernel,
            policy,
            horizon,
            seeds,
            output_dir: PathBuf::from(r.raw("run.output_dir").unwrap_or("out")),
            dump_dictionary: parse_bool(
                "run.dump_dictionary",
                r.raw("run.dump_dictionary").unwrap_or("false"),
            )?,
            refactor_every: (refactor_every > 0).then_some(refactor_every),
            env_seed_shift: r.or("run.env_seed_shift", 0)?,
            diag_every,
        })
    }

    pub fn seeds_for(&self, seed: u64) -> SeedSet {
        SeedSet::derive(seed, self.env_seed_shift)
    }
}
