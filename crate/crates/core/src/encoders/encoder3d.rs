use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::head::AuxHead;
use super::layers::{norm_relu, output_norm, Affine, ConvLayer, Norm};
use super::sparse::{coarsen, down_up_plans, submanifold_plan};
use super::EncoderOutput;
use crate::error::{Error, Result};
use crate::geometry::VoxelKey;
use crate::numerics::{ConvPlan, Graph, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Encoder3dConfig {
    /// Number of resolution levels of the U-Net.
    pub blocks: usize,
    /// Channels at the finest level; each coarser level doubles them.
    pub base_width: usize,
}

impl Default for Encoder3dConfig {
    fn default() -> Self {
        Self {
            blocks: 2,
            base_width: 16,
        }
    }
}

/// `x + conv(relu(norm(x)))`.
struct Residual {
    norm: Norm,
    conv: ConvLayer,
}

impl Residual {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, c: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            norm: Norm::new(store, &format!("{name}.norm"), c)?,
            conv: ConvLayer::new(store, &format!("{name}.conv"), 27, c, c, rng)?,
        })
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, plan: &Arc<ConvPlan>) -> Result<Var> {
        let h = norm_relu(g, store, &self.norm, x)?;
        let h = self.conv.forward(g, store, h, plan)?;
        g.add(x, h)
    }
}

/// Two residual layers.
struct Block([Residual; 2]);

impl Block {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, c: usize, rng: &mut R) -> Result<Self> {
        Ok(Self([
            Residual::new(store, &format!("{name}.res0"), c, rng)?,
            Residual::new(store, &format!("{name}.res1"), c, rng)?,
        ]))
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, plan: &Arc<ConvPlan>) -> Result<Var> {
        let x = self.0[0].forward(g, store, x, plan)?;
        self.0[1].forward(g, store, x, plan)
    }
}

/// Connectivity of every level of the U-Net for one voxel set.
pub struct SparseLevels {
    pub keys: Vec<Vec<VoxelKey>>,
    pub same: Vec<Arc<ConvPlan>>,
    pub down: Vec<Arc<ConvPlan>>,
    pub up: Vec<Arc<ConvPlan>>,
}

impl SparseLevels {
    pub fn build(keys: &[VoxelKey], levels: usize) -> Self {
        let mut all = vec![keys.to_vec()];
        let (mut same, mut down, mut up) = (Vec::new(), Vec::new(), Vec::new());
        for l in 0..levels {
            same.push(Arc::new(submanifold_plan(&all[l])));
            if l + 1 < levels {
                let coarse = coarsen(&all[l]);
                let (d, u) = down_up_plans(&all[l], &coarse);
                down.push(Arc::new(d));
                up.push(Arc::new(u));
                all.push(coarse);
            }
        }
        Self {
            keys: all,
            same,
            down,
            up,
        }
    }
}

/// Light-weight sparse U-Net over the voxels of one frame.
pub struct Encoder3d {
    stem: ConvLayer,
    encoders: Vec<Block>,
    downs: Vec<ConvLayer>,
    ups: Vec<ConvLayer>,
    decoders: Vec<Block>,
    final_norm: Norm,
    proj: Affine,
    pub head: AuxHead,
    pub levels: usize,
    pub feature_dim: usize,
}

impl Encoder3d {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        cfg: &Encoder3dConfig,
        feature_dim: usize,
        head_hidden: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.blocks == 0 {
            return Err(Error::Config("3-D encoder needs at least one block".into()));
        }
        let width = |l: usize| cfg.base_width << l;
        let mut encoders = Vec::new();
        let mut downs = Vec::new();
        let mut ups = Vec::new();
        let mut decoders = Vec::new();
        let stem = ConvLayer::new(store, "enc3d.stem", 27, feature_dim, width(0), rng)?;
        for l in 0..cfg.blocks {
            encoders.push(Block::new(store, &format!("enc3d.enc{l}"), width(l), rng)?);
            if l + 1 < cfg.blocks {
                downs.push(ConvLayer::new(store, &format!("enc3d.down{l}"), 8, width(l), width(l + 1), rng)?);
                ups.push(ConvLayer::new(store, &format!("enc3d.up{l}"), 8, width(l + 1), width(l), rng)?);
                decoders.push(Block::new(store, &format!("enc3d.dec{l}"), width(l), rng)?);
            }
        }
        Ok(Self {
            stem,
            encoders,
            downs,
            ups,
            decoders,
            final_norm: Norm::new(store, "enc3d.final_norm", width(0))?,
            proj: Affine::with_gain(store, "enc3d.proj", width(0), feature_dim, 1.0, rng)?,
            head: AuxHead::new(store, "enc3d.head", feature_dim, head_hidden, classes, rng)?,
            levels: cfg.blocks,
            feature_dim,
        })
    }

    /// Records the U-Net on `g`; `input` holds one `feature_dim` row per key.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, keys: &[VoxelKey], input: Var) -> Result<EncoderOutput> {
        if keys.is_empty() {
            return Err(Error::Empty("3-D encoder over zero voxels".into()));
        }
        let iv = g.value(input);
        if iv.rows() != keys.len() || iv.cols() != self.feature_dim {
            return Err(Error::Shape(format!(
                "3-D encoder expects [{}, {}] input, got {:?}",
                keys.len(),
                self.feature_dim,
                iv.shape()
            )));
        }
        let plans = SparseLevels::build(keys, self.levels);
        let mut x = self.stem.forward(g, store, input, &plans.same[0])?;
        let mut skips = Vec::new();
        for l in 0..self.levels {
            x = self.encoders[l].forward(g, store, x, &plans.same[l])?;
            if l + 1 < self.levels {
                skips.push(x);
                x = self.downs[l].forward(g, store, x, &plans.down[l])?;
            }
        }
        for l in (0..self.levels - 1).rev() {
            let up = self.ups[l].forward(g, store, x, &plans.up[l])?;
            let merged = g.add(up, skips[l])?;
            x = self.decoders[l].forward(g, store, merged, &plans.same[l])?;
        }
        let x = norm_relu(g, store, &self.final_norm, x)?;
        let f = self.proj.forward(g, store, x)?;
        let features = output_norm(g, f)?;
        let logits = self.head.forward(g, store, features)?;
        Ok(EncoderOutput { features, logits })
    }
}

/// Per-voxel features `[N, D]` and logits `[N, C]` for `keys`.
pub fn encode_3d(keys: &[VoxelKey], features: &Tensor, enc: &Encoder3d, store: &ParamStore) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let x = g.constant(features.clone());
    let out = enc.forward(&mut g, store, keys, x)?;
    Ok((g.value(out.features).clone(), g.value(out.logits).clone()))
}
