//! Named-tensor container used for checkpoints and precomputed features.
//!
//! Layout (little-endian): magic `SFTN`, `u32` version, `u32` entry count,
//! then per entry `u32` name length, UTF-8 name, `u8` dtype (0 = f64,
//! 1 = f32), `u32` rank, `u64` per dimension, and the raw values.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SFTN";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F64,
    F32,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F64 => 0,
            DType::F32 => 1,
        }
    }
}

pub fn write_tensors<W: Write>(mut w: W, entries: &[(String, Tensor)], dtype: DType) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(entries.len() as u32)?;
    for (name, t) in entries {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u8(dtype.code())?;
        w.write_u32::<LittleEndian>(t.shape().len() as u32)?;
        for d in t.shape() {
            w.write_u64::<LittleEndian>(*d as u64)?;
        }
        match dtype {
            DType::F64 => {
                for v in t.data() {
                    w.write_f64::<LittleEndian>(*v)?;
                }
            }
            DType::F32 => {
                for v in t.data() {
                    w.write_f32::<LittleEndian>(*v as f32)?;
                }
            }
        }
    }
    Ok(())
}

fn fmt_err(e: std::io::Error) -> Error {
    Error::Format(format!("truncated tensor file: {e}"))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(fmt_err)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a tensor file".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(fmt_err)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported tensor file version {version}")));
    }
    let count = r.read_u32::<LittleEndian>().map_err(fmt_err)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.read_u32::<LittleEndian>().map_err(fmt_err)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(fmt_err)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let dtype = r.read_u8().map_err(fmt_err)?;
        let rank = r.read_u32::<LittleEndian>().map_err(fmt_err)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u64::<LittleEndian>().map_err(fmt_err)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = vec![0.0; n];
        match dtype {
            0 => r.read_f64_into::<LittleEndian>(&mut data).map_err(fmt_err)?,
            1 => {
                let mut tmp = vec![0f32; n];
                r.read_f32_into::<LittleEndian>(&mut tmp).map_err(fmt_err)?;
                data.iter_mut().zip(tmp).for_each(|(d, s)| *d = s as f64);
            }
            other => return Err(Error::Format(format!("unknown dtype code {other}"))),
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn save_file(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensors(f, entries, DType::F64)
}

pub fn load_file(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_tensors(f)
}
