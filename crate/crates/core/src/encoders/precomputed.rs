//! Per-frame 2-D features produced by an external backbone.
//!
//! Each frame `i` has a tensor file `<dir>/<i:06>.sftn` holding a
//! `features` entry `[H·W, D]` and a `logits` entry `[H·W, C]`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::checkpoint::{load_file, save_file};
use crate::numerics::Tensor;

#[derive(Clone, Debug)]
pub struct PrecomputedFeatures {
    pub dir: PathBuf,
}

impl PrecomputedFeatures {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, frame_index: usize) -> PathBuf {
        self.dir.join(format!("{frame_index:06}.sftn"))
    }

    pub fn load(&self, frame_index: usize, pixels: usize, feature_dim: usize) -> Result<(Tensor, Tensor)> {
        let entries = load_file(&self.path_for(frame_index))?;
        let take = |name: &str| {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Format(format!("feature file lacks `{name}`")))
        };
        let (features, logits) = (take("features")?, take("logits")?);
        if features.rows() != pixels || features.cols() != feature_dim || logits.rows() != pixels {
            return Err(Error::Shape(format!(
                "precomputed features {:?} / logits {:?} do not fit {pixels} pixels × {feature_dim}",
                features.shape(),
                logits.shape()
            )));
        }
        Ok((features, logits))
    }

    pub fn store(dir: &Path, frame_index: usize, features: &Tensor, logits: &Tensor) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_file(
            &Self::new(dir).path_for(frame_index),
            &[("features".into(), features.clone()), ("logits".into(), logits.clone())],
        )
    }
}
