use std::io::Write;

use super::SceneMap;
use crate::error::Result;

/// One colour per class; classes past the end wrap around.
pub const PALETTE: [[u8; 3]; 20] = [
    [152, 223, 138],
    [174, 199, 232],
    [31, 119, 180],
    [255, 187, 120],
    [188, 189, 34],
    [140, 86, 75],
    [255, 152, 150],
    [214, 39, 40],
    [197, 176, 213],
    [148, 103, 189],
    [196, 156, 148],
    [23, 190, 207],
    [247, 182, 210],
    [219, 219, 141],
    [255, 127, 14],
    [158, 218, 229],
    [44, 160, 44],
    [112, 128, 144],
    [227, 119, 194],
    [82, 84, 163],
];

/// ASCII point cloud of voxel centres coloured by cached label. Voxels
/// without a label are grey and carry label -1.
pub fn write_ply<W: Write>(map: &SceneMap, mut w: W) -> Result<()> {
    let keys = map.sorted_keys();
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", keys.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property float {axis}")?;
    }
    for c in ["red", "green", "blue"] {
        writeln!(w, "property uchar {c}")?;
    }
    writeln!(w, "property int label")?;
    writeln!(w, "end_header")?;
    let res = map.resolution();
    for k in keys {
        let c = k.center(res);
        let label = map.get(&k).and_then(|r| r.cached_label);
        let rgb = label.map_or([128, 128, 128], |l| PALETTE[l as usize % PALETTE.len()]);
        let l = label.map_or(-1, |l| l as i64);
        writeln!(w, "{} {} {} {} {} {} {}", c.x as f32, c.y as f32, c.z as f32, rgb[0], rgb[1], rgb[2], l)?;
    }
    Ok(())
}
