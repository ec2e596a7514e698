use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::synth::{Primitive, SyntheticScene};
use crate::encoders::Frame;
use crate::error::Result;
use crate::geometry::{ColorImage, DepthImage, Intrinsics, Pose};

/// Direction towards the key light.
const LIGHT: [f64; 3] = [0.35, 0.55, 0.76];
const AMBIENT: f64 = 0.35;

/// Nearest primitive hit along the ray through pixel `(u, v)`: index,
/// depth along the optical axis and surface normal facing the camera.
pub fn cast(prims: &[Primitive], pose: &Pose, intr: &Intrinsics, u: usize, v: usize) -> Option<(usize, f64, Vector3<f64>)> {
    let dir_cam = Vector3::new((u as f64 - intr.cx) / intr.fx, (v as f64 - intr.cy) / intr.fy, 1.0);
    let dir = pose.rotation() * dir_cam;
    let origin = *pose.translation();
    let mut best: Option<(usize, f64, Vector3<f64>)> = None;
    for (i, p) in prims.iter().enumerate() {
        if let Some(h) = p.shape.intersect(&origin, &dir) {
            if best.is_none_or(|b| h.t < b.1) {
                let n = if h.normal.dot(&dir) > 0.0 { -h.normal } else { h.normal };
                best = Some((i, h.t, n));
            }
        }
    }
    best
}

/// Ray-cast depth (meters, 0 where nothing is hit) and Lambert-shaded
/// colour. Since the camera ray has unit z, the ray parameter is the depth.
pub fn render_frame(scene: &SyntheticScene, pose: &Pose, intr: &Intrinsics) -> (ColorImage, DepthImage) {
    let (w, h) = (intr.width, intr.height);
    let mut color = ColorImage::filled(w, h, [0.0; 3]);
    let mut depth = DepthImage::filled(w, h, 0.0);
    let light = Vector3::from(LIGHT).normalize();
    for v in 0..h {
        for u in 0..w {
            if let Some((i, t, n)) = cast(&scene.primitives, pose, intr, u, v) {
                let shade = AMBIENT + (1.0 - AMBIENT) * n.dot(&light).abs();
                color.set(u, v, scene.primitives[i].albedo.map(|a| (a * shade).clamp(0.0, 1.0)));
                depth.set(u, v, t);
            }
        }
    }
    (color, depth)
}

/// Quantizes like the on-disk format: 8-bit colour, millimeter depth.
pub fn quantize(color: &mut ColorImage, depth: &mut DepthImage) {
    for c in color.data.iter_mut() {
        *c = c.map(|x| (x * 255.0).round() / 255.0);
    }
    for d in depth.data.iter_mut() {
        let mm = (*d * 1000.0).round();
        *d = if (1.0..=65535.0).contains(&mm) { mm / 1000.0 } else { 0.0 };
    }
}

/// Renders frame `i` of the scene's trajectory in its stored (quantized)
/// form, optionally with Gaussian depth noise.
pub fn render_sequence_frame(scene: &SyntheticScene, i: usize) -> Result<Frame> {
    let pose = scene.trajectory[i].clone();
    let (mut color, mut depth) = render_frame(scene, &pose, &scene.intrinsics);
    if scene.depth_noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ ((i as u64 + 1) << 32));
        let noise = Normal::new(0.0, scene.depth_noise_std).expect("positive std");
        for d in depth.data.iter_mut().filter(|d| **d > 0.0) {
            *d = (*d + noise.sample(&mut rng)).max(0.0);
        }
    }
    quantize(&mut color, &mut depth);
    Frame::new(color, depth, scene.intrinsics.clone(), pose, i)
}
