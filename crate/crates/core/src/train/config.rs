//! Training configuration, read from a versioned TOML document.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbedderConfig;
use crate::error::{Error, Result};
use crate::features::ExtractorConfig;
use crate::generator::GeneratorConfig;
use crate::losses::LossWeights;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Frames share the source connectivity; supervised by vertex positions.
    Registered,
    /// Each frame has its own triangulation; supervised by chamfer distance.
    Unregistered,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Registered => "registered",
            TrainMode::Unregistered => "unregistered",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "registered" => Ok(TrainMode::Registered),
            "unregistered" => Ok(TrainMode::Unregistered),
            other => Err(Error::validation(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub format_version: u32,
    pub mode: TrainMode,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epochs between learning-rate decays.
    pub lr_step: usize,
    pub lr_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Sequences whose gradients are accumulated per optimizer step.
    pub batch: usize,
    pub seed: u64,
    pub eigenpairs: usize,
    /// Feed the true previous frame instead of the prediction (registered mode only).
    pub teacher_forcing: bool,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    /// Train only on these sequence paths; empty means the whole train split.
    pub sequences: Vec<String>,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub extractor: ExtractorConfig,
    pub embedder: EmbedderConfig,
    pub generator: GeneratorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            format_version: CONFIG_VERSION,
            mode: TrainMode::Registered,
            epochs: 200,
            learning_rate: 1e-3,
            lr_step: 5,
            lr_decay: 0.99,
            grad_clip: 1.0,
            batch: 1,
            seed: 0,
            eigenpairs: crate::spectral::DEFAULT_EIGENPAIRS,
            teacher_forcing: false,
            checkpoint_every: 0,
            sequences: Vec::new(),
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            extractor: ExtractorConfig::default(),
            embedder: EmbedderConfig::default(),
            generator: GeneratorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text)
            .map_err(|e| Error::validation(format!("invalid training config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Validation(m) => Error::validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_VERSION {
            return Err(Error::validation(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.format_version
            )));
        }
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.learning_rate) || !positive(self.lr_decay) || self.lr_decay > 1.0 {
            return Err(Error::validation(
                "learning_rate must be positive and lr_decay in (0, 1]",
            ));
        }
        if self.epochs == 0 || self.lr_step == 0 || self.batch == 0 {
            return Err(Error::validation("epochs, lr_step and batch must be positive"));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::validation("grad_clip must be non-negative"));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !positive(a.eps) {
            return Err(Error::validation("adam betas must lie in [0, 1) and eps be positive"));
        }
        if self.eigenpairs == 0 {
            return Err(Error::validation("eigenpairs must be positive"));
        }
        if self.teacher_forcing && self.mode == TrainMode::Unregistered {
            return Err(Error::validation(
                "teacher forcing needs registered ground truth",
            ));
        }
        self.loss.validate()
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.lr_step) as i32)
    }

    /// Position of `epoch` (0-based) in the run, used to switch the isometry term.
    pub fn epoch_fraction(&self, epoch: usize) -> f64 {
        epoch as f64 / self.epochs as f64
    }
}
