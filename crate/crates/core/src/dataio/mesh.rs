//! Labelled triangle meshes and their binary PLY form.
//!
//! Layout: `binary_little_endian 1.0`, vertices with `double x y z` and
//! `uchar label`, faces with `list uchar int vertex_indices` and `uchar
//! label`.

use std::io::{BufRead, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::synth::Primitive;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledMesh {
    pub vertices: Vec<[f64; 3]>,
    /// Class of every vertex.
    pub labels: Vec<u32>,
    pub triangles: Vec<[u32; 3]>,
    /// Class of every triangle; always equal to the labels of its vertices.
    pub triangle_labels: Vec<u32>,
}

const HEADER: &str = "ply\nformat binary_little_endian 1.0\ncomment semfuse labelled mesh\n";

impl LabeledMesh {
    pub fn from_primitives(prims: &[Primitive], spacing: f64) -> Self {
        let mut mesh = Self::default();
        for p in prims {
            let (v, t) = p.shape.triangulate(spacing);
            let base = mesh.vertices.len() as u32;
            mesh.labels.extend(std::iter::repeat_n(p.class, v.len()));
            mesh.vertices.extend(v);
            mesh.triangle_labels.extend(std::iter::repeat_n(p.class, t.len()));
            mesh.triangles.extend(t.into_iter().map(|f| f.map(|i| i + base)));
        }
        mesh
    }

    pub fn write_ply<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "{HEADER}")?;
        writeln!(w, "element vertex {}", self.vertices.len())?;
        writeln!(w, "property double x\nproperty double y\nproperty double z\nproperty uchar label")?;
        writeln!(w, "element face {}", self.triangles.len())?;
        writeln!(w, "property list uchar int vertex_indices\nproperty uchar label\nend_header")?;
        for (v, l) in self.vertices.iter().zip(&self.labels) {
            for c in v {
                w.write_f64::<LittleEndian>(*c)?;
            }
            w.write_u8(label_byte(*l)?)?;
        }
        for (t, l) in self.triangles.iter().zip(&self.triangle_labels) {
            w.write_u8(3)?;
            for i in t {
                w.write_i32::<LittleEndian>(*i as i32)?;
            }
            w.write_u8(label_byte(*l)?)?;
        }
        Ok(())
    }

    pub fn read_ply<R: BufRead>(mut r: R) -> Result<Self> {
        let mut expected = HEADER.lines().map(str::to_string).collect::<Vec<_>>().into_iter();
        let mut counts = Vec::new();
        loop {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Format("PLY header ends early".into()));
            }
            let line = line.trim_end();
            if line == "end_header" {
                break;
            }
            if let Some(want) = expected.next() {
                if line != want {
                    return Err(Error::Format(format!("unexpected PLY header line `{line}`")));
                }
                continue;
            }
            if let Some(rest) = line.strip_prefix("element ") {
                let n = rest
                    .split_whitespace()
                    .nth(1)
                    .and_then(|n| n.parse::<usize>().ok())
                    .ok_or_else(|| Error::Format(format!("bad element line `{line}`")))?;
                counts.push(n);
            }
        }
        let [nv, nf] = counts[..] else {
            return Err(Error::Format("PLY mesh needs vertex and face elements".into()));
        };
        let bad = |e: std::io::Error| Error::Format(format!("truncated PLY body: {e}"));
        let mut mesh = Self::default();
        for _ in 0..nv {
            let mut p = [0.0; 3];
            r.read_f64_into::<LittleEndian>(&mut p).map_err(bad)?;
            mesh.vertices.push(p);
            mesh.labels.push(r.read_u8().map_err(bad)? as u32);
        }
        for _ in 0..nf {
            if r.read_u8().map_err(bad)? != 3 {
                return Err(Error::Format("only triangles are supported".into()));
            }
            let mut t = [0u32; 3];
            for i in t.iter_mut() {
                let v = r.read_i32::<LittleEndian>().map_err(bad)?;
                if v < 0 || v as usize >= nv {
                    return Err(Error::Format(format!("face index {v} out of range")));
                }
                *i = v as u32;
            }
            mesh.triangles.push(t);
            mesh.triangle_labels.push(r.read_u8().map_err(bad)? as u32);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format("trailing bytes after PLY body".into()));
        }
        Ok(mesh)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_ply(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_ply(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn label_byte(l: u32) -> Result<u8> {
    u8::try_from(l).map_err(|_| Error::Format(format!("label {l} does not fit a byte")))
}

#[cfg(test)]
mod tests {
    use super::super::synth::{generate_scene, SceneSpec};
    use super::*;

    #[test]
    fn ply_roundtrip_is_exact() {
        let scene = generate_scene(2, &SceneSpec::default()).unwrap();
        let mut buf = Vec::new();
        scene.mesh.write_ply(&mut buf).unwrap();
        let back = LabeledMesh::read_ply(buf.as_slice()).unwrap();
        assert_eq!(back, scene.mesh);
        assert!(LabeledMesh::read_ply(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn triangles_carry_one_class() {
        let scene = generate_scene(4, &SceneSpec::default()).unwrap();
        let m = &scene.mesh;
        for (t, l) in m.triangles.iter().zip(&m.triangle_labels) {
            assert!(t.iter().all(|i| m.labels[*i as usize] == *l));
        }
    }
}
