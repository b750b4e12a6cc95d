use std::path::Path;

use serde::{Deserialize, Serialize};

use super::split::check_fractions;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::ArchConfig;

/// Everything the optimization loop reads. Missing keys in a config file take
/// the defaults below; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Window length `L` for the task branch.
    pub window: usize,
    /// Trailing frames `L1` kept for the action branch.
    pub visible: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seeds weight initialization and window shuffling.
    pub seed: u64,
    /// Train / val / test fractions, applied per task at demonstration level.
    pub split_fractions: [f64; 3],
    pub split_seed: u64,
    /// Windows drawn (without replacement) per epoch; all of them when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub windows_per_epoch: Option<usize>,
    /// Validation uses windows ending at every `val_stride`-th frame.
    pub val_stride: usize,
    /// Global gradient-norm ceiling; no clipping when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    pub hidden: usize,
    pub layers: usize,
    pub encoder_hidden: usize,
    pub embed_dim: usize,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window: 35,
            visible: 10,
            epochs: 8,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 17,
            split_fractions: [0.7, 0.15, 0.15],
            split_seed: 3,
            windows_per_epoch: Some(12_800),
            val_stride: 5,
            grad_clip: Some(5.0),
            hidden: 128,
            layers: 2,
            encoder_hidden: 64,
            embed_dim: 64,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&src)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.visible == 0 || self.visible > self.window {
            return Err(Error::Config(format!(
                "need 1 <= visible <= window, got visible {} and window {}",
                self.visible, self.window
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.val_stride == 0 {
            return Err(Error::Config("epochs, batch_size and val_stride must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} is not a finite non-negative number", self.learning_rate)));
        }
        if self.windows_per_epoch == Some(0) {
            return Err(Error::Config("windows_per_epoch must be positive when set".into()));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive when set".into()));
        }
        check_fractions(self.split_fractions)?;
        self.loss.validate()
    }

    /// Network shape for a taxonomy of `n_tasks`/`n_actions` and `n_features` inputs.
    pub fn arch(&self, n_features: usize, n_tasks: usize, n_actions: usize, conditioned: bool) -> ArchConfig {
        ArchConfig {
            input_dim: n_features,
            hidden: self.hidden,
            layers: self.layers,
            encoder_hidden: self.encoder_hidden,
            embed_dim: self.embed_dim,
            n_tasks,
            n_actions,
            window: self.window,
            visible: self.visible,
            conditioned,
        }
    }
}
