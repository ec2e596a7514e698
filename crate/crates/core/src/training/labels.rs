use std::collections::HashMap;

use crate::dataio::LabeledMesh;
use crate::error::{Error, Result};
use crate::geometry::{KdTree, VoxelKey};

/// Ground-truth voxel labels: the class of the mesh vertex nearest to the
/// voxel centre, computed on first use and cached.
pub struct VoxelLabeler {
    tree: KdTree,
    labels: Vec<u32>,
    resolution: f64,
    cache: HashMap<VoxelKey, u32>,
}

impl VoxelLabeler {
    pub fn new(mesh: &LabeledMesh, resolution: f64) -> Result<Self> {
        if mesh.vertices.len() != mesh.labels.len() {
            return Err(Error::Shape("one label per mesh vertex required".into()));
        }
        if mesh.vertices.is_empty() {
            return Err(Error::Empty("ground-truth mesh has no vertices".into()));
        }
        if !(resolution > 0.0) {
            return Err(Error::Config("resolution must be positive".into()));
        }
        Ok(Self {
            tree: KdTree::build(&mesh.vertices)?,
            labels: mesh.labels.clone(),
            resolution,
            cache: HashMap::new(),
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn label(&mut self, key: VoxelKey) -> u32 {
        let (tree, labels, res) = (&self.tree, &self.labels, self.resolution);
        *self.cache.entry(key).or_insert_with(|| {
            let c = key.center(res);
            labels[tree.nearest(&[c.x, c.y, c.z]).0]
        })
    }

    pub fn labels(&mut self, keys: &[VoxelKey]) -> Vec<u32> {
        keys.iter().map(|k| self.label(*k)).collect()
    }

    pub fn cached(&self) -> usize {
        self.cache.len()
    }
}
