use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest magnitude a key coordinate may take (21-bit signed).
pub const KEY_LIMIT: i64 = (1 << 20) - 1;

/// Integer voxel coordinates: `floor(position / resolution)` per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelKey {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl VoxelKey {
    pub fn new(x: i64, y: i64, z: i64) -> Result<Self> {
        for c in [x, y, z] {
            if c.abs() > KEY_LIMIT {
                return Err(Error::CoordinateOverflow(c));
            }
        }
        Ok(Self {
            x: x as i32,
            y: y as i32,
            z: z as i32,
        })
    }

    pub fn from_position(p: &Vector3<f64>, resolution: f64) -> Result<Self> {
        let cell = |v: f64| -> Result<i64> {
            let c = (v / resolution).floor();
            if !c.is_finite() || c.abs() > KEY_LIMIT as f64 {
                return Err(Error::CoordinateOverflow(if c.is_finite() { c as i64 } else { i64::MAX }));
            }
            Ok(c as i64)
        };
        Self::new(cell(p.x)?, cell(p.y)?, cell(p.z)?)
    }

    pub fn center(&self, resolution: f64) -> Vector3<f64> {
        Vector3::new(
            (self.x as f64 + 0.5) * resolution,
            (self.y as f64 + 0.5) * resolution,
            (self.z as f64 + 0.5) * resolution,
        )
    }

    /// Packs the three 21-bit two's-complement coordinates into one word.
    pub fn pack(&self) -> u64 {
        let m = (1u64 << 21) - 1;
        ((self.x as i64 as u64 & m) << 42) | ((self.y as i64 as u64 & m) << 21) | (self.z as i64 as u64 & m)
    }

    pub fn unpack(bits: u64) -> Self {
        let field = |shift: u32| -> i32 {
            let raw = ((bits >> shift) & ((1 << 21) - 1)) as i64;
            (if raw >= 1 << 20 { raw - (1 << 21) } else { raw }) as i32
        };
        Self {
            x: field(42),
            y: field(21),
            z: field(0),
        }
    }

    pub fn offset(&self, dx: i32, dy: i32, dz: i32) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            z: self.z + dz,
        }
    }

    /// Key of the enclosing cell at the next coarser (×2) level.
    pub fn parent(&self) -> Self {
        Self {
            x: self.x.div_euclid(2),
            y: self.y.div_euclid(2),
            z: self.z.div_euclid(2),
        }
    }

    /// Position inside the parent cell, in `0..8`.
    pub fn child_slot(&self) -> usize {
        (self.x.rem_euclid(2) * 4 + self.y.rem_euclid(2) * 2 + self.z.rem_euclid(2)) as usize
    }
}

/// Sorted distinct keys plus, for each key, the indices of the points that
/// fell into it (in input order).
pub fn group_by_voxel<'a>(
    positions: impl IntoIterator<Item = &'a Vector3<f64>>,
    resolution: f64,
) -> Result<(Vec<VoxelKey>, Vec<Vec<u32>>)> {
    if !(resolution > 0.0) {
        return Err(Error::Config("voxel resolution must be positive".into()));
    }
    let mut groups: BTreeMap<VoxelKey, Vec<u32>> = BTreeMap::new();
    for (i, p) in positions.into_iter().enumerate() {
        let key = VoxelKey::from_position(p, resolution)?;
        groups.entry(key).or_default().push(i as u32);
    }
    Ok(groups.into_iter().unzip())
}

/// Mean feature and point count of one voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelCell {
    pub feature: Vec<f64>,
    pub count: usize,
}

/// Averages the features of points that share a voxel.
pub fn voxelize(points: &[super::PointSample], resolution: f64) -> Result<BTreeMap<VoxelKey, VoxelCell>> {
    let (keys, groups) = group_by_voxel(points.iter().map(|p| &p.position), resolution)?;
    let mut out = BTreeMap::new();
    for (key, members) in keys.into_iter().zip(groups) {
        let dim = points[members[0] as usize].feature.len();
        let mut feature = vec![0.0; dim];
        for &m in &members {
            let f = &points[m as usize].feature;
            if f.len() != dim {
                return Err(Error::Shape("points carry features of different sizes".into()));
            }
            for (a, b) in feature.iter_mut().zip(f) {
                *a += b;
            }
        }
        let inv = 1.0 / members.len() as f64;
        feature.iter_mut().for_each(|v| *v *= inv);
        out.insert(
            key,
            VoxelCell {
                feature,
                count: members.len(),
            },
        );
    }
    Ok(out)
}
