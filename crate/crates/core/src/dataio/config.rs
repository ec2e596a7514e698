use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::SceneSpec;
use crate::error::{Error, Result};
use crate::expert::ModelConfig;
use crate::training::{LossConfig, TrainConfig};

/// Which synthetic scenes make up the benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_scenes: usize,
    pub eval_scenes: usize,
    /// Seed of the first training scene; the rest follow consecutively.
    pub train_seed: u64,
    pub eval_seed: u64,
    pub scene: SceneSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_scenes: 16,
            eval_scenes: 4,
            train_seed: 0,
            eval_seed: 1000,
            scene: SceneSpec::default(),
        }
    }
}

impl DataConfig {
    pub fn train_seeds(&self) -> impl Iterator<Item = u64> {
        self.train_seed..self.train_seed + self.train_scenes as u64
    }

    pub fn eval_seeds(&self) -> impl Iterator<Item = u64> {
        self.eval_seed..self.eval_seed + self.eval_scenes as u64
    }
}

/// Every setting of a run in one TOML file. Missing keys take defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        if self.loss.num_classes != self.model.classes {
            return Err(Error::Config(format!(
                "loss.num_classes {} differs from model.classes {}",
                self.loss.num_classes, self.model.classes
            )));
        }
        if self.model.classes != super::NUM_CLASSES {
            log::warn!("model has {} classes; the synthetic data has {}", self.model.classes, super::NUM_CLASSES);
        }
        let (a, b) = (self.data.train_seed, self.data.eval_seed);
        let (na, nb) = (self.data.train_scenes as u64, self.data.eval_scenes as u64);
        if a < b + nb && b < a + na {
            return Err(Error::Config("training and evaluation seeds overlap".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }
}
