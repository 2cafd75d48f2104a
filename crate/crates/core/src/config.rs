//! Flat run configuration read from TOML. Every key is optional; unknown
//! keys are rejected by name.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::TrainConfig;
use crate::model::{BranchConfig, FusionMode, ModelConfig};
use crate::preprocess::{Modality, OSClass, PreprocessConfig, DAYS_PER_MONTH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub sketch_dim: usize,
    pub feature_dim: usize,
    /// Seeds folds, initialisation, batching, augmentation and the sketch plan.
    pub seed: u64,
    pub augment: bool,
    pub arbitrary_rotation: bool,
    pub folds: usize,
    pub val_fraction: f64,
    pub channels_per_stage: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub final_pool: usize,
    pub signed_sqrt_l2: bool,
    pub fusion: FusionMode,
    pub image_size: usize,
    pub crop: usize,
    pub days_per_month: f64,
    pub age_scale: f64,
    pub support_modality: Modality,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let b = BranchConfig::toy();
        RunConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            lambda1: t.lambda1,
            lambda2: t.lambda2,
            sketch_dim: 512,
            feature_dim: b.feature_dim,
            seed: t.seed,
            augment: t.augment,
            arbitrary_rotation: t.arbitrary_rotation,
            folds: t.folds,
            val_fraction: t.val_fraction,
            channels_per_stage: b.channels_per_stage,
            blocks_per_stage: b.blocks_per_stage,
            final_pool: 2,
            signed_sqrt_l2: false,
            fusion: FusionMode::Full,
            image_size: 8,
            crop: 24,
            days_per_month: DAYS_PER_MONTH,
            age_scale: 0.01,
            support_modality: Modality::T1,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Usage(format!("config: {}", e.message())))
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            branch: BranchConfig {
                channels_per_stage: self.channels_per_stage.clone(),
                blocks_per_stage: self.blocks_per_stage.clone(),
                feature_dim: self.feature_dim,
                final_pool: self.final_pool,
            },
            num_classes: OSClass::COUNT,
            image_size: self.image_size,
            sketch_dim: self.sketch_dim,
            sketch_seed: self.seed,
            signed_sqrt_l2: self.signed_sqrt_l2,
            fusion: self.fusion,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            seed: self.seed,
            augment: self.augment,
            arbitrary_rotation: self.arbitrary_rotation,
            folds: self.folds,
            val_fraction: self.val_fraction,
        }
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            crop: self.crop,
            size: self.image_size,
            days_per_month: self.days_per_month,
            support_modality: self.support_modality,
            age_scale: self.age_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train().validate()?;
        crate::model::Model::new(self.model())?;
        if self.crop == 0 {
            return Err(Error::Config("crop must be positive".into()));
        }
        Ok(())
    }
}
