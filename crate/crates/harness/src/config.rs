//! Experiment configuration files.
//!
//! ```toml
//! [experiment]
//! mode = "super:quantile"        # dqn | parameter_sharing | super:<strategy>
//! total_env_steps = 150000
//! seeds = [0, 1, 2]
//! report_interval_steps = 1000   # default 1000 for the mini preset, 8000 otherwise
//! smoothing_alpha = 0.3
//!
//! [environment]
//! preset = "mini"                # mini | pursuit; remaining keys override it
//!
//! [trainer]                      # any TrainerConfig field
//! [selection]                    # any SelectionConfig field
//! ```
//!
//! Unknown keys anywhere are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use super_core::env::{mini_pursuit_config, PursuitConfig};
use super_core::trainer::RunMode;
use super_core::types::{SelectionConfig, TrainerConfig};

use crate::error::{HarnessError, Result};

pub const DEFAULT_SMOOTHING_ALPHA: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: RunMode,
    pub total_env_steps: u64,
    pub seeds: Vec<u64>,
    pub report_interval_steps: u64,
    pub smoothing_alpha: f64,
    pub environment: PursuitConfig,
    /// `selection` is included; `seed` is replaced per run.
    pub trainer: TrainerConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    experiment: RawExperiment,
    #[serde(default)]
    environment: toml::Table,
    #[serde(default)]
    trainer: Option<toml::Table>,
    #[serde(default)]
    selection: SelectionConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    mode: String,
    total_env_steps: u64,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    report_interval_steps: Option<u64>,
    #[serde(default = "default_alpha")]
    smoothing_alpha: f64,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_alpha() -> f64 {
    DEFAULT_SMOOTHING_ALPHA
}

#[derive(Serialize)]
struct WrittenFile<'a> {
    experiment: RawExperiment,
    environment: &'a PursuitConfig,
    trainer: &'a TrainerConfig,
    selection: &'a SelectionConfig,
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string().trim_end().to_string())
}

fn environment_from(table: toml::Table) -> Result<(PursuitConfig, bool)> {
    let mut table = table;
    let preset = match table.remove("preset") {
        None => "pursuit".to_string(),
        Some(toml::Value::String(s)) => s,
        Some(other) => return Err(config_err(format!("environment.preset: expected a string, got {other}"))),
    };
    let (base, is_mini) = match preset.as_str() {
        "pursuit" => (PursuitConfig::default(), false),
        "mini" | "mini_pursuit" => (mini_pursuit_config(), true),
        other => return Err(config_err(format!("environment.preset: unknown preset `{other}`"))),
    };
    let mut merged = match toml::Value::try_from(&base).map_err(config_err)? {
        toml::Value::Table(t) => t,
        _ => unreachable!("struct serializes to a table"),
    };
    for (k, v) in table {
        if !merged.contains_key(&k) {
            return Err(config_err(format!("environment: unknown field `{k}`")));
        }
        merged.insert(k, v);
    }
    let cfg: PursuitConfig = toml::Value::Table(merged)
        .try_into()
        .map_err(|e| config_err(format!("environment: {e}")))?;
    Ok((cfg, is_mini))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawFile = toml::from_str(text).map_err(config_err)?;
        let (environment, is_mini) = environment_from(raw.environment)?;
        let mut trainer: TrainerConfig = match raw.trainer {
            Some(t) => toml::Value::Table(t)
                .try_into()
                .map_err(|e| config_err(format!("trainer: {e}")))?,
            None => TrainerConfig::default(),
        };
        trainer.selection = raw.selection;
        let mode: RunMode = raw.experiment.mode.parse()?;
        let cfg = ExperimentConfig {
            mode,
            total_env_steps: raw.experiment.total_env_steps,
            seeds: raw.experiment.seeds,
            report_interval_steps: raw
                .experiment
                .report_interval_steps
                .unwrap_or(if is_mini { 1000 } else { 8000 }),
            smoothing_alpha: raw.experiment.smoothing_alpha,
            environment,
            trainer,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(HarnessError::io(format!("reading {}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(config_err("experiment.seeds: must not be empty"));
        }
        if self.report_interval_steps == 0 {
            return Err(config_err("experiment.report_interval_steps: must be positive"));
        }
        if self.total_env_steps == 0 {
            return Err(config_err("experiment.total_env_steps: must be positive"));
        }
        if !(self.smoothing_alpha > 0.0 && self.smoothing_alpha <= 1.0) {
            return Err(config_err("experiment.smoothing_alpha: must lie in (0, 1]"));
        }
        self.environment.validate()?;
        self.trainer.validate()?;
        Ok(())
    }

    /// Fully expanded file that parses back to `self`.
    pub fn to_toml_string(&self) -> Result<String> {
        let file = WrittenFile {
            experiment: RawExperiment {
                mode: self.mode.to_string(),
                total_env_steps: self.total_env_steps,
                seeds: self.seeds.clone(),
                report_interval_steps: Some(self.report_interval_steps),
                smoothing_alpha: self.smoothing_alpha,
            },
            environment: &self.environment,
            trainer: &self.trainer,
            selection: &self.trainer.selection,
        };
        toml::to_string(&file).map_err(config_err)
    }

    /// Trainer settings for one seed.
    pub fn trainer_for_seed(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            seed,
            ..self.trainer.clone()
        }
    }
}
