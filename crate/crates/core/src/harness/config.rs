//! Run configuration, read from TOML. Every section is optional and falls
//! back to the desk-scale defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::network::{ModelConfig, Variant};
use crate::synthdata::GenConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for parameter initialization and batch order.
    pub seed: u64,
    pub data: DataConfig,
    pub gen: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub ablation: AblationConfig,
}

/// How many samples to generate, and from which master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Train the segmentation path alone first, then freeze it and train the rest.
    pub staged: bool,
    /// Length of the first stage; defaults to `epochs`.
    pub segmentation_epochs: Option<usize>,
    /// Evaluate on the training set every this many epochs (0: final epoch only).
    pub eval_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Model seeds shared by every arm.
    pub seeds: Vec<u64>,
    /// Arm names to run; empty means all of them.
    pub arms: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            data: DataConfig::default(),
            gen: GenConfig::default(),
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            loss: LossWeights::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { seed: 0, train: 5000, val: 500 }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            decay_epochs: vec![10, 20],
            decay_factor: 0.1,
            batch_size: 16,
            epochs: 30,
            staged: false,
            segmentation_epochs: None,
            eval_every: 0,
        }
    }
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig { seeds: vec![1, 2, 3], arms: Vec::new() }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.model.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.gen.validate()?;
        self.loss.validate()?;
        if self.gen.crop_size != self.model.crop_size {
            return Err(Error::Config(format!(
                "generator crop {} does not match model crop {}",
                self.gen.crop_size, self.model.crop_size
            )));
        }
        if self.gen.seg_size != self.model.segmentation_size() {
            return Err(Error::Config(format!(
                "generator seg_size {} must be half the crop ({})",
                self.gen.seg_size,
                self.model.segmentation_size()
            )));
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(t.lr > 0.0) || !(t.decay_factor > 0.0) {
            return Err(Error::Config("lr and decay_factor must be positive".into()));
        }
        if t.staged && !self.model.variant.supervises_segmentation() {
            return Err(Error::Config(format!(
                "staged training needs a supervised segmentation branch; {} has none",
                self.model.variant
            )));
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// One line naming the code version and the config hash, written at the top of every artifact.
    pub fn provenance(&self) -> String {
        format!("handseg {} config {}", env!("CARGO_PKG_VERSION"), self.hash())
    }
}
