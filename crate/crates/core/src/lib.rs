//! Online semantic mapping: posed RGB-D frames are fused into a sparse voxel
//! grid of learned features by a per-voxel cross-attention expert.

pub mod dataio;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod expert;
pub mod geometry;
pub mod numerics;
pub mod scene_map;
pub mod training;

pub use error::{Error, Result};
