//! Experiment configuration: JSON on disk, validated into typed form with
//! field-path error messages.

use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use thiserror::Error;
use uha_core::bounds::GroupSet;
use uha_core::targets::{
    parse_libsvm, AnyTarget, DiagGaussian, LogisticRegression, StudentT,
};
use uha_core::tuning::Method;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
    #[error("cannot read {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("cannot parse {0}: {1}")]
    Json(PathBuf, serde_json::Error),
}

fn invalid(path: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_string(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    StudentT {
        dim: usize,
        #[serde(default = "default_nu")]
        nu: f64,
    },
    Gaussian {
        dim: usize,
        #[serde(default)]
        loc: Option<Vec<f64>>,
        #[serde(default)]
        scale: Option<Vec<f64>>,
    },
    Logistic {
        path: PathBuf,
        #[serde(default)]
        features: Option<usize>,
        #[serde(default)]
        max_rows: Option<usize>,
    },
}

fn default_nu() -> f64 {
    3.0
}

impl TargetSpec {
    pub fn build(&self) -> Result<AnyTarget, ConfigError> {
        match self {
            TargetSpec::StudentT { dim, nu } => StudentT::new(*dim, *nu)
                .map(AnyTarget::StudentT)
                .map_err(|e| invalid("target", e.to_string())),
            TargetSpec::Gaussian { dim, loc, scale } => {
                let loc = loc.clone().unwrap_or_else(|| vec![0.0; *dim]);
                let scale = scale.clone().unwrap_or_else(|| vec![1.0; *dim]);
                if loc.len() != *dim || scale.len() != *dim {
                    return Err(invalid("target", "loc/scale length must equal dim"));
                }
                DiagGaussian::new(loc, scale)
                    .map(AnyTarget::Gaussian)
                    .map_err(|e| invalid("target", e.to_string()))
            }
            TargetSpec::Logistic {
                path,
                features,
                max_rows,
            } => {
                let file = File::open(path).map_err(|e| ConfigError::Io(path.clone(), e))?;
                let mut data = parse_libsvm(BufReader::new(file), *features)
                    .map_err(|e| invalid("target.path", e.to_string()))?;
                if let Some(n) = max_rows {
                    data.truncate(*n);
                }
                LogisticRegression::new(data)
                    .map(AnyTarget::Logistic)
                    .map_err(|e| invalid("target", e.to_string()))
            }
        }
    }

    /// Metadata echoed in run records (the logistic prior is a convention,
    /// not stated by any reference).
    pub fn notes(&self) -> Option<String> {
        match self {
            TargetSpec::Logistic { .. } => Some(
                "logistic prior: standard normal per weight, unit scale, no intercept".to_string(),
            ),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    #[serde(default = "default_etas")]
    pub etas: Vec<f64>,
    #[serde(default = "default_rejections")]
    pub target_rejection_rates: Vec<f64>,
    #[serde(default = "default_pilot_draws")]
    pub pilot_draws: usize,
}

fn default_etas() -> Vec<f64> {
    vec![0.5, 0.9, 0.99]
}
fn default_rejections() -> Vec<f64> {
    vec![0.05, 0.25, 0.5]
}
fn default_pilot_draws() -> usize {
    64
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            etas: default_etas(),
            target_rejection_rates: default_rejections(),
            pilot_draws: default_pilot_draws(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: String,
    pub target: TargetSpec,
    pub k: usize,
    #[serde(default)]
    pub trainable: Vec<String>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_rates")]
    pub learning_rates: Vec<f64>,
    #[serde(default = "default_eval_draws")]
    pub eval_draws: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_n_seeds")]
    pub n_seeds: usize,
    /// Initialize q at a plain-VI optimum before training (skipped for
    /// method = plain_vi).
    #[serde(default = "default_true")]
    pub init_from_plain_vi: bool,
    #[serde(default)]
    pub init_plain_vi_steps: Option<usize>,
    #[serde(default = "default_eps_max")]
    pub eps_max: f64,
    #[serde(default = "default_eps_init")]
    pub eps_init: f64,
    #[serde(default = "default_eta_init")]
    pub eta_init: f64,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_steps() -> usize {
    5000
}
fn default_batch() -> usize {
    16
}
fn default_rates() -> Vec<f64> {
    vec![1e-3, 1e-4, 1e-5]
}
fn default_eval_draws() -> usize {
    10_000
}
fn default_n_seeds() -> usize {
    4
}
fn default_true() -> bool {
    true
}
fn default_eps_max() -> f64 {
    0.5
}
fn default_eps_init() -> f64 {
    0.1
}
fn default_eta_init() -> f64 {
    0.5
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let file = File::open(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        let config: ExperimentConfig = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| ConfigError::Json(path.to_path_buf(), e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn method(&self) -> Result<Method, ConfigError> {
        self.method
            .parse()
            .map_err(|e: String| invalid("method", e))
    }

    pub fn groups(&self) -> Result<GroupSet, ConfigError> {
        GroupSet::from_names(&self.trainable).map_err(|e| invalid("trainable", e))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let method = self.method()?;
        if self.k < 1 {
            return Err(invalid("k", "must be at least 1"));
        }
        if self.steps < 1 {
            return Err(invalid("steps", "must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        if self.eval_draws < 2 {
            return Err(invalid("eval_draws", "need at least 2 draws"));
        }
        if self.n_seeds < 1 {
            return Err(invalid("n_seeds", "must be at least 1"));
        }
        if self.learning_rates.is_empty() || self.learning_rates.iter().any(|&lr| lr <= 0.0) {
            return Err(invalid("learning_rates", "need positive learning rates"));
        }
        if !(self.eps_max > 0.0) {
            return Err(invalid("eps_max", "must be positive"));
        }
        if !(self.eps_init > 0.0 && self.eps_init < self.eps_max) {
            return Err(invalid("eps_init", "must be in (0, eps_max)"));
        }
        if !(self.eta_init > 0.0 && self.eta_init < 1.0) {
            return Err(invalid("eta_init", "must be in (0, 1)"));
        }
        let groups = self.groups()?;
        match method {
            Method::Hais => {
                if !groups.is_empty() {
                    return Err(invalid(
                        "trainable",
                        "hais has no gradient-trainable parameters; use \"grid\"",
                    ));
                }
                if let Some(grid) = &self.grid {
                    if grid.etas.is_empty() || grid.target_rejection_rates.is_empty() {
                        return Err(invalid("grid", "etas and target_rejection_rates non-empty"));
                    }
                    if grid
                        .target_rejection_rates
                        .iter()
                        .any(|&r| !(r > 0.0 && r < 1.0))
                    {
                        return Err(invalid(
                            "grid.target_rejection_rates",
                            "rates must lie in (0, 1)",
                        ));
                    }
                    if grid.pilot_draws < 1 {
                        return Err(invalid("grid.pilot_draws", "must be at least 1"));
                    }
                }
            }
            Method::PlainVi | Method::Iw => {
                if self.grid.is_some() {
                    return Err(invalid("grid", "only method \"hais\" takes a grid"));
                }
                for g in &self.trainable {
                    if g != "q" {
                        return Err(invalid(
                            "trainable",
                            format!("method {:?} only trains \"q\", got {g:?}", self.method),
                        ));
                    }
                }
            }
            Method::Uha => {
                if self.grid.is_some() {
                    return Err(invalid("grid", "only method \"hais\" takes a grid"));
                }
            }
        }
        Ok(())
    }
}
