//! The global learned scene representation: a sparse voxel hash grid with
//! per-voxel features, observation counts and cached labels.

mod ply;
mod snapshot;

use std::collections::{HashMap, HashSet};

pub use ply::{write_ply, PALETTE};
pub use snapshot::{from_bytes, load, save, to_bytes};

use crate::encoders::AuxHead;
use crate::error::{Error, Result};
use crate::geometry::VoxelKey;
use crate::numerics::{argmax, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelRecord {
    pub feature: Vec<f64>,
    pub obs_count: u32,
    pub cached_label: Option<u32>,
}

/// Features of a set of voxels, one row per key.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBlock {
    pub keys: Vec<VoxelKey>,
    pub features: Tensor,
    pub counts: Vec<u32>,
    /// `true` where the key was absent from the map at crop time.
    pub novel: Vec<bool>,
}

impl FeatureBlock {
    pub fn new(keys: Vec<VoxelKey>, features: Tensor) -> Result<Self> {
        if features.rows() != keys.len() && !(keys.is_empty() && features.is_empty()) {
            return Err(Error::Shape(format!("{} rows for {} keys", features.rows(), keys.len())));
        }
        check_unique(&keys)?;
        let n = keys.len();
        Ok(Self {
            keys,
            features,
            counts: vec![0; n],
            novel: vec![false; n],
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

fn check_unique(keys: &[VoxelKey]) -> Result<()> {
    let mut seen = HashSet::with_capacity(keys.len());
    for k in keys {
        if !seen.insert(*k) {
            return Err(Error::Misaligned(format!("duplicate key {k:?}")));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneMap {
    resolution: f64,
    feature_dim: usize,
    voxels: HashMap<VoxelKey, VoxelRecord>,
    frames: u64,
}

impl SceneMap {
    pub fn new(resolution: f64, feature_dim: usize) -> Result<Self> {
        if !(resolution > 0.0) {
            return Err(Error::Config("map resolution must be positive".into()));
        }
        if feature_dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        Ok(Self {
            resolution,
            feature_dim,
            voxels: HashMap::new(),
            frames: 0,
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// Number of blocks written so far.
    pub fn frame_counter(&self) -> u64 {
        self.frames
    }

    pub fn get(&self, key: &VoxelKey) -> Option<&VoxelRecord> {
        self.voxels.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VoxelKey, &VoxelRecord)> {
        self.voxels.iter()
    }

    /// Keys in ascending order.
    pub fn sorted_keys(&self) -> Vec<VoxelKey> {
        let mut keys: Vec<VoxelKey> = self.voxels.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    /// Drops every voxel; resolution and feature size are kept.
    pub fn clear(&mut self) {
        self.voxels.clear();
        self.frames = 0;
    }

    /// Reads the stored state for `keys`. Absent keys come back as zero
    /// features with count 0 and the novelty flag set.
    pub fn crop(&self, keys: &[VoxelKey]) -> Result<FeatureBlock> {
        check_unique(keys)?;
        let d = self.feature_dim;
        let mut data = vec![0.0; keys.len() * d];
        let mut counts = vec![0; keys.len()];
        let mut novel = vec![true; keys.len()];
        for (i, k) in keys.iter().enumerate() {
            if let Some(r) = self.voxels.get(k) {
                data[i * d..(i + 1) * d].copy_from_slice(&r.feature);
                counts[i] = r.obs_count;
                novel[i] = false;
            }
        }
        Ok(FeatureBlock {
            keys: keys.to_vec(),
            features: Tensor::matrix(keys.len(), d, data)?,
            counts,
            novel,
        })
    }

    /// Replaces the features of the block's keys and bumps their counts.
    /// Nothing is written if any feature is non-finite.
    pub fn write_back(&mut self, block: &FeatureBlock) -> Result<()> {
        if block.features.cols() != self.feature_dim && !block.is_empty() {
            return Err(Error::Shape(format!(
                "block features have {} columns, map stores {}",
                block.features.cols(),
                self.feature_dim
            )));
        }
        if !block.features.is_finite() {
            return Err(Error::Numeric("refusing to store non-finite features".into()));
        }
        check_unique(&block.keys)?;
        for (i, k) in block.keys.iter().enumerate() {
            let row = block.features.row(i);
            match self.voxels.get_mut(k) {
                Some(r) => {
                    r.feature.copy_from_slice(row);
                    r.obs_count += 1;
                }
                None => {
                    self.voxels.insert(
                        *k,
                        VoxelRecord {
                            feature: row.to_vec(),
                            obs_count: 1,
                            cached_label: None,
                        },
                    );
                }
            }
        }
        self.frames += 1;
        Ok(())
    }

    /// Labels every voxel with the argmax of `head` over its feature (ties
    /// to the lower class) and caches the result. Returns labels by key.
    pub fn classify(&mut self, head: &AuxHead, store: &ParamStore) -> Result<Vec<(VoxelKey, u32)>> {
        if head.input_dim != self.feature_dim {
            return Err(Error::Shape(format!(
                "head consumes {} features, map stores {}",
                head.input_dim, self.feature_dim
            )));
        }
        let keys = self.sorted_keys();
        if keys.is_empty() {
            return Ok(Vec::new());
        }
        let block = self.crop(&keys)?;
        let logits = head.logits(store, &block.features)?;
        let mut out = Vec::with_capacity(keys.len());
        for (i, k) in keys.into_iter().enumerate() {
            let label = argmax(logits.row(i)) as u32;
            self.voxels.get_mut(&k).expect("cropped key").cached_label = Some(label);
            out.push((k, label));
        }
        Ok(out)
    }

    pub(crate) fn from_parts(resolution: f64, feature_dim: usize, frames: u64, voxels: HashMap<VoxelKey, VoxelRecord>) -> Self {
        Self {
            resolution,
            feature_dim,
            voxels,
            frames,
        }
    }
}

/// Convenience wrapper mirroring [`SceneMap::classify`].
pub fn classify_map(map: &mut SceneMap, head: &AuxHead, store: &ParamStore) -> Result<Vec<(VoxelKey, u32)>> {
    map.classify(head, store)
}

#[cfg(test)]
mod tests;
