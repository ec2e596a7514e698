use nalgebra::Vector3;

use super::camera::{DepthImage, Intrinsics, Pose};
use super::PointSample;
use crate::encoders::Frame;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Points farther than this along the optical axis are discarded.
pub const DEFAULT_DEPTH_CUTOFF: f64 = 3.0;

/// A valid pixel lifted to world space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LiftedPixel {
    pub pixel: u32,
    pub position: Vector3<f64>,
}

/// World-space points of every pixel with `0 < depth ≤ cutoff`, in raster
/// order.
pub fn lift_pixels(depth: &DepthImage, intr: &Intrinsics, pose: &Pose, cutoff: f64) -> Vec<LiftedPixel> {
    let mut out = Vec::new();
    for v in 0..depth.height {
        for u in 0..depth.width {
            let d = *depth.get(u, v);
            if !(d > 0.0 && d <= cutoff) {
                continue;
            }
            let cam = intr.back_project(u as f64, v as f64, d);
            out.push(LiftedPixel {
                pixel: (v * depth.width + u) as u32,
                position: pose.transform(&cam),
            });
        }
    }
    out
}

/// Lifts per-pixel features (`[H·W, D]`) into world-space point samples.
pub fn lift(frame: &Frame, features: &Tensor, cutoff: f64) -> Result<Vec<PointSample>> {
    if features.rows() != frame.intrinsics.pixel_count() {
        return Err(Error::Shape(format!(
            "{} feature rows for a {}×{} frame",
            features.rows(),
            frame.intrinsics.width,
            frame.intrinsics.height
        )));
    }
    Ok(lift_pixels(&frame.depth, &frame.intrinsics, &frame.pose, cutoff)
        .into_iter()
        .map(|p| PointSample {
            position: p.position,
            feature: features.row(p.pixel as usize).to_vec(),
            label: None,
        })
        .collect())
}

/// Pixel coordinates and depth of a world point seen from `pose`.
pub fn reproject(p: &Vector3<f64>, pose: &Pose, intr: &Intrinsics) -> (f64, f64, f64) {
    intr.project(&pose.inverse_transform(p))
}
