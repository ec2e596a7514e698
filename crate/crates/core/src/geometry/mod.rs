//! Camera model, normal estimation, lifting, voxelization and label transfer.

pub mod camera;
pub mod kdtree;
pub mod lift;
pub mod normals;
pub mod voxel;

use nalgebra::Vector3;

pub use camera::{ColorImage, DepthImage, ImageBuf, Intrinsics, Pose};
pub use kdtree::{transfer_labels, KdTree};
pub use lift::{lift, lift_pixels, reproject, LiftedPixel, DEFAULT_DEPTH_CUTOFF};
pub use normals::{estimate_normals, NormalMap};
pub use voxel::{group_by_voxel, voxelize, VoxelCell, VoxelKey};

/// Default voxel edge length in meters.
pub const DEFAULT_RESOLUTION: f64 = 0.04;

/// A world-space point with a feature vector and optional class.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSample {
    pub position: Vector3<f64>,
    pub feature: Vec<f64>,
    pub label: Option<u32>,
}
