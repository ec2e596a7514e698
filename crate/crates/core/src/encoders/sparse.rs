//! Convolution plans over sparse voxel sets.

use std::collections::HashMap;

use crate::geometry::VoxelKey;
use crate::numerics::ConvPlan;

/// Index of the centre tap in a 3×3×3 kernel.
pub const CENTER_TAP: usize = 13;

/// Offset of tap `k` of a 3×3×3 kernel.
pub fn tap_offset(k: usize) -> (i32, i32, i32) {
    let k = k as i32;
    (k / 9 - 1, (k / 3) % 3 - 1, k % 3 - 1)
}

/// Submanifold 3×3×3 convolution: outputs live on the input sites and
/// absent neighbours contribute nothing.
pub fn submanifold_plan(keys: &[VoxelKey]) -> ConvPlan {
    let index: HashMap<VoxelKey, u32> = keys.iter().enumerate().map(|(i, k)| (*k, i as u32)).collect();
    let mut taps = vec![Vec::new(); 27];
    for (t, pairs) in taps.iter_mut().enumerate() {
        let (dx, dy, dz) = tap_offset(t);
        for (o, k) in keys.iter().enumerate() {
            if let Some(&i) = index.get(&k.offset(dx, dy, dz)) {
                pairs.push((o as u32, i));
            }
        }
    }
    ConvPlan {
        taps,
        n_in: keys.len(),
        n_out: keys.len(),
    }
}

/// Sorted distinct parent keys of `keys`.
pub fn coarsen(keys: &[VoxelKey]) -> Vec<VoxelKey> {
    let mut parents: Vec<VoxelKey> = keys.iter().map(VoxelKey::parent).collect();
    parents.sort_unstable();
    parents.dedup();
    parents
}

/// Kernel-2 stride-2 convolution from `fine` to `coarse` sites, and its
/// transpose back to `fine`.
pub fn down_up_plans(fine: &[VoxelKey], coarse: &[VoxelKey]) -> (ConvPlan, ConvPlan) {
    let index: HashMap<VoxelKey, u32> = coarse.iter().enumerate().map(|(i, k)| (*k, i as u32)).collect();
    let mut down = vec![Vec::new(); 8];
    let mut up = vec![Vec::new(); 8];
    for (f, k) in fine.iter().enumerate() {
        let c = index[&k.parent()];
        down[k.child_slot()].push((c, f as u32));
        up[k.child_slot()].push((f as u32, c));
    }
    (
        ConvPlan {
            taps: down,
            n_in: fine.len(),
            n_out: coarse.len(),
        },
        ConvPlan {
            taps: up,
            n_in: coarse.len(),
            n_out: fine.len(),
        },
    )
}
