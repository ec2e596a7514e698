//! Gather plans shared by dense-image and sparse-voxel convolutions.
//!
//! A convolution over an arbitrary set of sites is described by, for each
//! kernel tap, the list of `(output row, input row)` pairs it connects.
//! Missing neighbors simply have no pair, which makes them contribute zero.

/// Connectivity of one convolution: `taps[k]` lists `(out, in)` row pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvPlan {
    pub taps: Vec<Vec<(u32, u32)>>,
    pub n_in: usize,
    pub n_out: usize,
}

impl ConvPlan {
    pub fn kernel_size(&self) -> usize {
        self.taps.len()
    }

    /// 3×3 stride-1 convolution over an `h×w` image with zero padding.
    pub fn image_3x3(h: usize, w: usize) -> Self {
        let mut taps = vec![Vec::with_capacity(h * w); 9];
        for y in 0..h {
            for x in 0..w {
                let out = (y * w + x) as u32;
                for (k, (dy, dx)) in offsets_2d().enumerate() {
                    let (sy, sx) = (y as isize + dy, x as isize + dx);
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                        taps[k].push((out, (sy as usize * w + sx as usize) as u32));
                    }
                }
            }
        }
        Self {
            taps,
            n_in: h * w,
            n_out: h * w,
        }
    }

    /// 3×3 stride-2 convolution from `h×w` to `ceil(h/2)×ceil(w/2)`.
    pub fn image_3x3_stride2(h: usize, w: usize) -> Self {
        let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
        let mut taps = vec![Vec::with_capacity(ho * wo); 9];
        for y in 0..ho {
            for x in 0..wo {
                let out = (y * wo + x) as u32;
                for (k, (dy, dx)) in offsets_2d().enumerate() {
                    let (sy, sx) = (2 * y as isize + dy, 2 * x as isize + dx);
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                        taps[k].push((out, (sy as usize * w + sx as usize) as u32));
                    }
                }
            }
        }
        Self {
            taps,
            n_in: h * w,
            n_out: ho * wo,
        }
    }

    /// 2×2 stride-2 transposed convolution from `ceil(h/2)×ceil(w/2)` back
    /// to `h×w`: every fine pixel reads its parent through the tap selected
    /// by its position inside the 2×2 cell.
    pub fn image_up2(h: usize, w: usize) -> Self {
        let wo = w.div_ceil(2);
        let mut taps = vec![Vec::new(); 4];
        for y in 0..h {
            for x in 0..w {
                let k = (y % 2) * 2 + x % 2;
                taps[k].push(((y * w + x) as u32, ((y / 2) * wo + x / 2) as u32));
            }
        }
        Self {
            taps,
            n_in: h.div_ceil(2) * wo,
            n_out: h * w,
        }
    }
}

fn offsets_2d() -> impl Iterator<Item = (isize, isize)> {
    (-1..=1).flat_map(|dy| (-1..=1).map(move |dx| (dy, dx)))
}

/// Groups of input rows averaged into one output row each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    pub n_in: usize,
    pub groups: Vec<Vec<u32>>,
}
