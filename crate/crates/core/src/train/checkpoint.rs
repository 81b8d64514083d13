//! Self-describing, hash-stamped model checkpoints (JSON).

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use crate::autodiff::Tensor;
use crate::embedding::MotionEmbedder;
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::generator::DeformationGenerator;
use crate::losses::LossComponents;
use crate::nn::Params;

pub const CHECKPOINT_VERSION: u32 = 1;

/// The three trainable modules. Parameters are ordered extractor, embedder, generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub extractor: FeatureExtractor,
    pub embedder: MotionEmbedder,
    pub generator: DeformationGenerator,
}

impl Model {
    pub fn new(cfg: &TrainConfig, init_time: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let extractor = FeatureExtractor::new(&cfg.extractor, init_time, &mut rng)?;
        let embedder = MotionEmbedder::new(&cfg.embedder, &mut rng)?;
        let generator = DeformationGenerator::new(
            &cfg.generator,
            extractor.output_width(),
            embedder.code_width(),
            &mut rng,
        )?;
        Ok(Model {
            extractor,
            embedder,
            generator,
        })
    }
}

impl Params for Model {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.extractor.tensors();
        v.extend(self.embedder.tensors());
        v.extend(self.generator.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.extractor.tensors_mut();
        v.extend(self.embedder.tensors_mut());
        v.extend(self.generator.tensors_mut());
        v
    }
}

/// Mean training losses of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss: f64,
    /// Registered mode only.
    pub components: Option<LossComponents>,
    pub grad_norm: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// SHA-256 over the rest of the document; filled in by [`Checkpoint::stamp`].
    pub id: String,
    pub config: TrainConfig,
    /// Epochs completed.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub dataset_hash: Option<String>,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, model: Model) -> Self {
        let mut c = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            id: String::new(),
            config,
            epoch: 0,
            history: Vec::new(),
            dataset_hash: None,
            model,
        };
        c.stamp();
        c
    }

    fn content_hash(&self) -> String {
        let mut unstamped = self.clone();
        unstamped.id.clear();
        let text = serde_json::to_string(&unstamped).expect("checkpoint serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Recomputes `id` after the content changed.
    pub fn stamp(&mut self) {
        self.id = self.content_hash();
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            location: format!("line {}", e.line()),
            message: e.to_string(),
        })?;
        if c.format_version != CHECKPOINT_VERSION {
            return Err(Error::validation(format!(
                "{}: unsupported checkpoint version {}",
                path.display(),
                c.format_version
            )));
        }
        if c.content_hash() != c.id {
            return Err(Error::Format {
                path: path.to_path_buf(),
                location: "id".into(),
                message: "content does not match the recorded hash".into(),
            });
        }
        Ok(c)
    }
}
