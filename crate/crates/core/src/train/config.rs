use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::ModelConfig;

/// Optimizer, schedule and loop settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_gamma: f64,
    /// Epochs at which the rate is multiplied by `lr_gamma`.
    /// Unset means 60% and 80% of `epochs`.
    pub lr_milestones: Option<Vec<usize>>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm cap; unset disables clipping.
    pub max_grad_norm: Option<f64>,
    /// Random dihedral transform per training sample.
    pub augment: bool,
    /// Map `[0, 1]` inputs to `[-1, 1]` before the forward pass.
    pub normalize: bool,
    /// Running-statistics momentum of batch normalization.
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-5,
            lr_gamma: 0.1,
            lr_milestones: None,
            epochs: 100,
            batch_size: 8,
            seed: 0,
            max_grad_norm: None,
            augment: true,
            normalize: true,
            bn_momentum: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn milestones(&self) -> Vec<usize> {
        match &self.lr_milestones {
            Some(m) => m.clone(),
            None => {
                let mut m: Vec<usize> = [0.6, 0.8]
                    .iter()
                    .map(|f| (f * self.epochs as f64).floor() as usize)
                    .filter(|&e| e > 0 && e < self.epochs)
                    .collect();
                m.dedup();
                m
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::Config(format!("base_lr {} must be positive", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) || !(self.lr_gamma > 0.0) {
            return Err(Error::Config("weight_decay must be >= 0 and lr_gamma > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config(format!("bn_momentum {} outside [0, 1]", self.bn_momentum)));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("max_grad_norm {c} must be positive")));
            }
        }
        let m = self.milestones();
        if m.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("milestones {m:?} are not strictly increasing")));
        }
        if m.last().is_some_and(|&e| e >= self.epochs) {
            return Err(Error::Config(format!("milestones {m:?} must precede epoch {}", self.epochs)));
        }
        Ok(())
    }
}

/// Learning rate in effect during `epoch`: `base · γ^(milestones ≤ epoch)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let passed = cfg.milestones().iter().filter(|&&m| m <= epoch).count();
    cfg.base_lr * cfg.lr_gamma.powi(passed as i32)
}

/// Everything a training run reads from its config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Format {
                path: path.to_path_buf(),
                reason: m,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()
    }
}
