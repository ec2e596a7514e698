//! Directory layout of a recorded sequence:
//!
//! ```text
//! intrinsics.txt        fx fy cx cy width height
//! color/NNNNNN.png      8-bit RGB
//! depth/NNNNNN.png      16-bit depth in millimeters, 0 = invalid
//! pose/NNNNNN.txt       4×4 camera-to-world matrix, row-major
//! mesh.ply              optional labelled ground-truth mesh
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use nalgebra::Matrix4;

use super::mesh::LabeledMesh;
use super::render::render_sequence_frame;
use super::synth::SyntheticScene;
use crate::encoders::Frame;
use crate::error::{Error, Result};
use crate::geometry::{ColorImage, DepthImage, Intrinsics, Pose};

/// Rotation tolerance for poses read back from text.
const POSE_READ_TOLERANCE: f64 = 1e-6;

/// A sequence on disk. Frames are loaded on demand.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub root: PathBuf,
    pub intrinsics: Intrinsics,
    /// Frame numbers present in `color/`, ascending.
    pub frames: Vec<usize>,
}

fn frame_name(i: usize, ext: &str) -> String {
    format!("{i:06}.{ext}")
}

impl Sequence {
    pub fn open(root: &Path) -> Result<Self> {
        let intrinsics = read_intrinsics(&root.join("intrinsics.txt"))?;
        let dir = root.join("color");
        let mut frames = Vec::new();
        if dir.is_dir() {
            for entry in fs::read_dir(&dir)? {
                let name = entry?.file_name();
                let name = name.to_string_lossy();
                if let Some(stem) = name.strip_suffix(".png") {
                    if let Ok(i) = stem.parse::<usize>() {
                        frames.push(i);
                    }
                }
            }
        }
        if frames.is_empty() {
            return Err(Error::Empty(format!("no frames found in {}", dir.display())));
        }
        frames.sort_unstable();
        Ok(Self {
            root: root.to_path_buf(),
            intrinsics,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Loads the `n`-th frame of the sequence (not frame number `n`).
    pub fn frame(&self, n: usize) -> Result<Frame> {
        let i = *self
            .frames
            .get(n)
            .ok_or_else(|| Error::Missing(format!("frame {n} of {}", self.frames.len())))?;
        let color = read_color(&self.root.join("color").join(frame_name(i, "png")))?;
        let depth = read_depth(&self.root.join("depth").join(frame_name(i, "png")))?;
        let pose = read_pose(&self.root.join("pose").join(frame_name(i, "txt")))?;
        Frame::new(color, depth, self.intrinsics, pose, i)
    }

    pub fn mesh(&self) -> Result<LabeledMesh> {
        let path = self.root.join("mesh.ply");
        if !path.exists() {
            return Err(Error::Missing(format!("{} has no mesh.ply", self.root.display())));
        }
        LabeledMesh::load(&path)
    }
}

pub fn write_frame(root: &Path, frame: &Frame) -> Result<()> {
    for sub in ["color", "depth", "pose"] {
        fs::create_dir_all(root.join(sub))?;
    }
    let i = frame.index;
    write_color(&root.join("color").join(frame_name(i, "png")), &frame.color)?;
    write_depth(&root.join("depth").join(frame_name(i, "png")), &frame.depth)?;
    write_pose(&root.join("pose").join(frame_name(i, "txt")), &frame.pose)
}

/// Renders every trajectory frame of `scene` and writes the full sequence.
pub fn write_synthetic(root: &Path, scene: &SyntheticScene) -> Result<Sequence> {
    fs::create_dir_all(root)?;
    write_intrinsics(&root.join("intrinsics.txt"), &scene.intrinsics)?;
    for i in 0..scene.trajectory.len() {
        write_frame(root, &render_sequence_frame(scene, i)?)?;
    }
    scene.mesh.save(&root.join("mesh.ply"))?;
    Sequence::open(root)
}

fn parse_numbers(path: &Path, n: usize) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let vals = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if vals.len() != n {
        return Err(Error::Format(format!("{}: expected {n} numbers, found {}", path.display(), vals.len())));
    }
    Ok(vals)
}

pub fn read_intrinsics(path: &Path) -> Result<Intrinsics> {
    let v = parse_numbers(path, 6)?;
    if v[4].fract() != 0.0 || v[5].fract() != 0.0 || v[4] < 1.0 || v[5] < 1.0 {
        return Err(Error::Format(format!("{}: image size must be a positive integer", path.display())));
    }
    Intrinsics::new(v[0], v[1], v[2], v[3], v[4] as usize, v[5] as usize)
}

pub fn write_intrinsics(path: &Path, k: &Intrinsics) -> Result<()> {
    fs::write(path, format!("{:?} {:?} {:?} {:?} {} {}\n", k.fx, k.fy, k.cx, k.cy, k.width, k.height))?;
    Ok(())
}

pub fn read_pose(path: &Path) -> Result<Pose> {
    let v = parse_numbers(path, 16)?;
    Pose::from_matrix(&Matrix4::from_row_slice(&v), POSE_READ_TOLERANCE)
}

pub fn write_pose(path: &Path, pose: &Pose) -> Result<()> {
    let m = pose.to_matrix();
    let mut s = String::new();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{:?}", m[(r, c)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_color(path: &Path) -> Result<ColorImage> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0.map(|c| c as f64 / 255.0)).collect();
    ColorImage::from_vec(w as usize, h as usize, data)
}

pub fn write_color(path: &Path, img: &ColorImage) -> Result<()> {
    let buf = ImageBuffer::<Rgb<u8>, _>::from_fn(img.width as u32, img.height as u32, |u, v| {
        Rgb(img.get(u as usize, v as usize).map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    buf.save(path)?;
    Ok(())
}

pub fn read_depth(path: &Path) -> Result<DepthImage> {
    let img = image::open(path)?;
    let img = match img {
        image::DynamicImage::ImageLuma16(b) => b,
        _ => return Err(Error::Format(format!("{}: depth must be a 16-bit grey PNG", path.display()))),
    };
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0[0] as f64 / 1000.0).collect();
    DepthImage::from_vec(w as usize, h as usize, data)
}

pub fn write_depth(path: &Path, img: &DepthImage) -> Result<()> {
    let buf = ImageBuffer::<Luma<u16>, _>::from_fn(img.width as u32, img.height as u32, |u, v| {
        let mm = (img.get(u as usize, v as usize) * 1000.0).round();
        Luma([if (0.0..=65535.0).contains(&mm) { mm as u16 } else { 0 }])
    });
    buf.save(path)?;
    Ok(())
}
