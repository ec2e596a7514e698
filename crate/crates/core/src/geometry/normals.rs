use nalgebra::Vector3;

use super::camera::{DepthImage, ImageBuf, Intrinsics};

/// Per-pixel camera-frame normals; `None` where the stencil is incomplete.
pub type NormalMap = ImageBuf<Option<Vector3<f64>>>;

/// Normals from the cross product of central-difference tangents of the
/// back-projected depth map, oriented towards the camera.
///
/// A pixel gets a normal only if it and its four axis neighbours all carry
/// valid (positive) depth. Border pixels are therefore always invalid.
pub fn estimate_normals(depth: &DepthImage, intr: &Intrinsics) -> NormalMap {
    let (w, h) = (depth.width, depth.height);
    let mut out = ImageBuf::filled(w, h, None);
    if w < 3 || h < 3 {
        return out;
    }
    let point = |u: usize, v: usize| -> Option<Vector3<f64>> {
        let d = *depth.get(u, v);
        (d > 0.0 && d.is_finite()).then(|| intr.back_project(u as f64, v as f64, d))
    };
    for v in 1..h - 1 {
        for u in 1..w - 1 {
            let (Some(c), Some(l), Some(r), Some(t), Some(b)) =
                (point(u, v), point(u - 1, v), point(u + 1, v), point(u, v - 1), point(u, v + 1))
            else {
                continue;
            };
            let n = (r - l).cross(&(b - t));
            let len = n.norm();
            if !(len > 0.0) {
                continue;
            }
            let mut n = n / len;
            if n.dot(&c) > 0.0 {
                n = -n;
            }
            out.set(u, v, Some(n));
        }
    }
    out
}
