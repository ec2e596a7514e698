use crate::error::{Error, Result};
use crate::geometry::{estimate_normals, ColorImage, DepthImage, Intrinsics, NormalMap, Pose};
use crate::numerics::Tensor;

/// Channels fed to the 2-D encoder: RGB, depth, normal.
pub const INPUT_CHANNELS: usize = 7;

/// One posed RGB-D observation. Normals are always derived from depth.
#[derive(Clone, Debug)]
pub struct Frame {
    pub color: ColorImage,
    pub depth: DepthImage,
    pub normals: NormalMap,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub index: usize,
}

impl Frame {
    pub fn new(color: ColorImage, depth: DepthImage, intrinsics: Intrinsics, pose: Pose, index: usize) -> Result<Self> {
        intrinsics.validate()?;
        let (w, h) = (intrinsics.width, intrinsics.height);
        if (color.width, color.height) != (w, h) || (depth.width, depth.height) != (w, h) {
            return Err(Error::Shape(format!(
                "frame planes {}×{} / {}×{} do not match intrinsics {w}×{h}",
                color.width, color.height, depth.width, depth.height
            )));
        }
        if depth.data.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::Numeric("depth must be finite and nonnegative".into()));
        }
        let normals = estimate_normals(&depth, &intrinsics);
        Ok(Self {
            color,
            depth,
            normals,
            intrinsics,
            pose,
            index,
        })
    }

    /// `[H·W, 7]` network input: RGB, depth in meters, normal (zero where
    /// invalid).
    pub fn input_tensor(&self) -> Tensor {
        let n = self.intrinsics.pixel_count();
        let mut data = Vec::with_capacity(n * INPUT_CHANNELS);
        for i in 0..n {
            data.extend_from_slice(&self.color.data[i]);
            data.push(self.depth.data[i]);
            match self.normals.data[i] {
                Some(nv) => data.extend_from_slice(&[nv.x, nv.y, nv.z]),
                None => data.extend_from_slice(&[0.0; 3]),
            }
        }
        Tensor::matrix(n, INPUT_CHANNELS, data).expect("sized above")
    }

    pub fn valid_depth_pixels(&self) -> usize {
        self.depth.data.iter().filter(|d| **d > 0.0).count()
    }
}
