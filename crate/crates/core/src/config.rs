//! Training configuration and its flat `key = value` file format.
//!
//! ```text
//! # comments and blank lines are ignored
//! env = pendulum
//! algo = gppo
//! gp_lengthscale = 5e-4
//! ```
//!
//! Keys and defaults:
//!
//! | key              | default    |
//! |------------------|------------|
//! | env              | pendulum   |
//! | algo             | gppo       |
//! | seed             | 0          |
//! | total_timesteps  | 150000     |
//! | actors           | 4          |
//! | rollout_len      | 2048       |
//! | hidden           | 64,64      |
//! | gamma            | 0.99       |
//! | lambda           | 0.95       |
//! | clip_epsilon     | 0.2        |
//! | c1               | 0.5        |
//! | lr               | 3e-4       |
//! | adam_beta1       | 0.9        |
//! | adam_beta2       | 0.999      |
//! | adam_epsilon     | 1e-8       |
//! | epochs           | 10         |
//! | minibatches      | 32         |
//! | acquisition      | ei         |
//! | kappa            | 1.0        |
//! | gp_signal        | 1.0        |
//! | gp_lengthscale   | 5e-4       |
//! | gp_noise         | 1e-2       |
//! | gp_jitter        | 1e-8       |
//! | gp_memory        | 20         |
//! | reproducible     | false      |
//! | log_path         | (none)     |
//! | checkpoint_dir   | (none)     |
//!
//! Unknown keys are rejected. Overrides are applied after the file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::envs::ENV_NAMES;
use crate::error::{Error, Result};
use crate::gp::KernelConfig;
use crate::loss::LossConfig;

/// Desk-scale default budget.
pub const DEFAULT_TOTAL_TIMESTEPS: u64 = 150_000;
/// Budget used for the full-length setting.
pub const FULL_TOTAL_TIMESTEPS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Gppo,
    Ppo,
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gppo" => Ok(Self::Gppo),
            "ppo" => Ok(Self::Ppo),
            other => Err(Error::Config(format!("unknown algo `{other}` (expected gppo|ppo)"))),
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gppo => "gppo",
            Self::Ppo => "ppo",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env_name: String,
    pub algo: Algo,
    pub seed: u64,
    pub total_timesteps: u64,
    pub n_actors: usize,
    pub rollout_len: usize,
    pub hidden: Vec<usize>,
    pub gae_lambda: f64,
    pub kernel: KernelConfig,
    pub loss: LossConfig,
    pub gp_memory_capacity: usize,
    /// Collect on one thread and log `wall_time_s` as 0 so logs are
    /// bitwise reproducible.
    pub reproducible: bool,
    pub log_path: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env_name: "pendulum".into(),
            algo: Algo::Gppo,
            seed: 0,
            total_timesteps: DEFAULT_TOTAL_TIMESTEPS,
            n_actors: 4,
            rollout_len: 2048,
            hidden: crate::policy::HIDDEN.to_vec(),
            gae_lambda: 0.95,
            kernel: KernelConfig::default(),
            loss: LossConfig::default(),
            gp_memory_capacity: 20,
            reproducible: false,
            log_path: None,
            checkpoint_dir: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "env" => self.env_name = v.to_string(),
            "algo" => self.algo = v.parse()?,
            "seed" => self.seed = parse(key, v)?,
            "total_timesteps" => self.total_timesteps = parse(key, v)?,
            "actors" => self.n_actors = parse(key, v)?,
            "rollout_len" => self.rollout_len = parse(key, v)?,
            "hidden" => {
                self.hidden = v
                    .split(',')
                    .map(|s| parse::<usize>(key, s))
                    .collect::<Result<Vec<_>>>()?
            }
            "gamma" => self.loss.gamma = parse(key, v)?,
            "lambda" => self.gae_lambda = parse(key, v)?,
            "clip_epsilon" => self.loss.clip_epsilon = parse(key, v)?,
            "c1" => self.loss.c1 = parse(key, v)?,
            "lr" => self.loss.learning_rate = parse(key, v)?,
            "adam_beta1" => self.loss.adam_beta1 = parse(key, v)?,
            "adam_beta2" => self.loss.adam_beta2 = parse(key, v)?,
            "adam_epsilon" => self.loss.adam_epsilon = parse(key, v)?,
            "epochs" => self.loss.epochs = parse(key, v)?,
            "minibatches" => self.loss.minibatches = parse(key, v)?,
            "acquisition" => self.loss.acquisition = v.parse()?,
            "kappa" => self.loss.kappa = parse(key, v)?,
            "gp_signal" => self.kernel.sigma_f = parse(key, v)?,
            "gp_lengthscale" => self.kernel.lengthscale = parse(key, v)?,
            "gp_noise" => self.kernel.sigma_n = parse(key, v)?,
            "gp_jitter" => self.kernel.jitter = parse(key, v)?,
            "gp_memory" => self.gp_memory_capacity = parse(key, v)?,
            "reproducible" => self.reproducible = parse_bool(key, v)?,
            "log_path" => self.log_path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "checkpoint_dir" => self.checkpoint_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if !ENV_NAMES.contains(&self.env_name.as_str()) {
            return err(format!("unknown env `{}` (expected one of {ENV_NAMES:?})", self.env_name));
        }
        if self.n_actors == 0 || self.rollout_len == 0 {
            return err("actors and rollout_len must be >= 1".into());
        }
        let per_iter = (self.n_actors as u64).saturating_mul(self.rollout_len as u64);
        if self.total_timesteps < per_iter {
            return err(format!(
                "total_timesteps ({}) must be >= actors * rollout_len ({per_iter})",
                self.total_timesteps
            ));
        }
        if self.gp_memory_capacity == 0 {
            return err("gp_memory must be >= 1".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return err(format!("hidden sizes must be nonempty and positive: {:?}", self.hidden));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return err(format!("lambda must be in [0, 1], got {}", self.gae_lambda));
        }
        let batch = self.n_actors * self.rollout_len;
        if self.loss.minibatches > batch {
            return err(format!(
                "minibatches ({}) exceeds samples per iteration ({batch})",
                self.loss.minibatches
            ));
        }
        self.loss.validate()?;
        self.kernel.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Renders the configuration in the file format accepted by [`parse_config`].
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        let l = &self.loss;
        let k = &self.kernel;
        let _ = writeln!(s, "env = {}", self.env_name);
        let _ = writeln!(s, "algo = {}", self.algo);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "total_timesteps = {}", self.total_timesteps);
        let _ = writeln!(s, "actors = {}", self.n_actors);
        let _ = writeln!(s, "rollout_len = {}", self.rollout_len);
        let _ = writeln!(s, "hidden = {}", hidden.join(","));
        let _ = writeln!(s, "gamma = {:?}", l.gamma);
        let _ = writeln!(s, "lambda = {:?}", self.gae_lambda);
        let _ = writeln!(s, "clip_epsilon = {:?}", l.clip_epsilon);
        let _ = writeln!(s, "c1 = {:?}", l.c1);
        let _ = writeln!(s, "lr = {:?}", l.learning_rate);
        let _ = writeln!(s, "adam_beta1 = {:?}", l.adam_beta1);
        let _ = writeln!(s, "adam_beta2 = {:?}", l.adam_beta2);
        let _ = writeln!(s, "adam_epsilon = {:?}", l.adam_epsilon);
        let _ = writeln!(s, "epochs = {}", l.epochs);
        let _ = writeln!(s, "minibatches = {}", l.minibatches);
        let _ = writeln!(s, "acquisition = {}", l.acquisition);
        let _ = writeln!(s, "kappa = {:?}", l.kappa);
        let _ = writeln!(s, "gp_signal = {:?}", k.sigma_f);
        let _ = writeln!(s, "gp_lengthscale = {:?}", k.lengthscale);
        let _ = writeln!(s, "gp_noise = {:?}", k.sigma_n);
        let _ = writeln!(s, "gp_jitter = {:?}", k.jitter);
        let _ = writeln!(s, "gp_memory = {}", self.gp_memory_capacity);
        let _ = writeln!(s, "reproducible = {}", self.reproducible);
        if let Some(p) = &self.log_path {
            let _ = writeln!(s, "log_path = {}", p.display());
        }
        if let Some(p) = &self.checkpoint_dir {
            let _ = writeln!(s, "checkpoint_dir = {}", p.display());
        }
        s
    }
}

/// Parses `key = value` lines into `cfg`. Line numbers appear in errors.
pub fn apply_config_text(cfg: &mut TrainConfig, text: &str) -> Result<()> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        cfg.set(key, value)
            .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
    }
    Ok(())
}

/// Defaults, then the optional file, then `overrides` (same keys as the file).
pub fn parse_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        apply_config_text(&mut cfg, &text)?;
    }
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
