//! Binary map snapshots.
//!
//! Layout (little endian): magic `SFMP`, u32 version, f64 resolution,
//! u32 feature size, u64 frame counter, u64 voxel count, then one record per
//! voxel in key order (`i32 x, i32 y, i32 z, u32 count, i32 label or -1,
//! f64 × D`), and a trailing CRC-32 of everything before it.

use std::collections::HashMap;
use std::io::{Cursor, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{SceneMap, VoxelRecord};
use crate::error::{Error, Result};
use crate::geometry::VoxelKey;

const MAGIC: &[u8; 4] = b"SFMP";
const VERSION: u32 = 1;

pub fn to_bytes(map: &SceneMap) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.write_all(MAGIC)?;
    buf.write_u32::<LittleEndian>(VERSION)?;
    buf.write_f64::<LittleEndian>(map.resolution)?;
    buf.write_u32::<LittleEndian>(map.feature_dim as u32)?;
    buf.write_u64::<LittleEndian>(map.frames)?;
    buf.write_u64::<LittleEndian>(map.len() as u64)?;
    for key in map.sorted_keys() {
        let r = &map.voxels[&key];
        buf.write_i32::<LittleEndian>(key.x)?;
        buf.write_i32::<LittleEndian>(key.y)?;
        buf.write_i32::<LittleEndian>(key.z)?;
        buf.write_u32::<LittleEndian>(r.obs_count)?;
        buf.write_i32::<LittleEndian>(r.cached_label.map_or(-1, |l| l as i32))?;
        for v in &r.feature {
            buf.write_f64::<LittleEndian>(*v)?;
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.write_u32::<LittleEndian>(crc)?;
    Ok(buf)
}

fn truncated(e: std::io::Error) -> Error {
    Error::Format(format!("truncated map snapshot: {e}"))
}

pub fn from_bytes(bytes: &[u8]) -> Result<SceneMap> {
    if bytes.len() < 4 + 4 {
        return Err(Error::Format("map snapshot too short".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    if &body[..4] != MAGIC {
        return Err(Error::Format("not a map snapshot".into()));
    }
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("map snapshot checksum mismatch".into()));
    }
    let mut r = Cursor::new(&body[4..]);
    let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported map snapshot version {version}")));
    }
    let resolution = r.read_f64::<LittleEndian>().map_err(truncated)?;
    let dim = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let frames = r.read_u64::<LittleEndian>().map_err(truncated)?;
    let count = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
    let record = 20 + 8 * dim;
    let remaining = body.len() - 4 - r.position() as usize;
    if count.checked_mul(record) != Some(remaining) {
        return Err(Error::Format(format!("snapshot holds {remaining} record bytes, expected {count} × {record}")));
    }
    SceneMap::new(resolution, dim).map_err(|e| Error::Format(e.to_string()))?;
    let mut voxels = HashMap::with_capacity(count);
    for _ in 0..count {
        let x = r.read_i32::<LittleEndian>().map_err(truncated)?;
        let y = r.read_i32::<LittleEndian>().map_err(truncated)?;
        let z = r.read_i32::<LittleEndian>().map_err(truncated)?;
        let key = VoxelKey::new(x as i64, y as i64, z as i64)?;
        let obs_count = r.read_u32::<LittleEndian>().map_err(truncated)?;
        let label = r.read_i32::<LittleEndian>().map_err(truncated)?;
        let mut feature = vec![0.0; dim];
        r.read_f64_into::<LittleEndian>(&mut feature).map_err(truncated)?;
        let rec = VoxelRecord {
            feature,
            obs_count,
            cached_label: u32::try_from(label).ok(),
        };
        if voxels.insert(key, rec).is_some() {
            return Err(Error::Format(format!("duplicate voxel {key:?} in snapshot")));
        }
    }
    Ok(SceneMap::from_parts(resolution, dim, frames, voxels))
}

pub fn save(map: &SceneMap, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(map)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SceneMap> {
    from_bytes(&std::fs::read(path)?)
}
