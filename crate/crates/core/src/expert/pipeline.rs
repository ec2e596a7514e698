use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttentionTrace, Expert, ExpertConfig, ExpertOutput};
use crate::encoders::{Encoder2d, Encoder2dConfig, Encoder3d, Encoder3dConfig, Frame, PrecomputedFeatures};
use crate::error::{Error, Result};
use crate::geometry::{group_by_voxel, lift_pixels, VoxelKey, DEFAULT_DEPTH_CUTOFF, DEFAULT_RESOLUTION};
use crate::numerics::checkpoint::{load_file, save_file};
use crate::numerics::{argmax, Graph, ParamStore, Segments, Tensor, Var};
use crate::scene_map::{FeatureBlock, SceneMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub classes: usize,
    pub head_hidden: usize,
    pub resolution: f64,
    pub depth_cutoff: f64,
    /// Seed of the parameter initialization.
    pub init_seed: u64,
    pub encoder2d: Encoder2dConfig,
    pub encoder3d: Encoder3dConfig,
    pub expert: ExpertConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 40,
            classes: 8,
            head_hidden: 32,
            resolution: DEFAULT_RESOLUTION,
            depth_cutoff: DEFAULT_DEPTH_CUTOFF,
            init_seed: 0,
            encoder2d: Encoder2dConfig::default(),
            encoder3d: Encoder3dConfig::default(),
            expert: ExpertConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.classes == 0 || self.head_hidden == 0 {
            return Err(Error::Config("feature_dim, classes and head_hidden must be positive".into()));
        }
        if !(self.resolution > 0.0) || !(self.depth_cutoff > 0.0) {
            return Err(Error::Config("resolution and depth_cutoff must be positive".into()));
        }
        if self.encoder3d.blocks == 0 {
            return Err(Error::Config("the 3-D encoder needs at least one level".into()));
        }
        Ok(())
    }
}

/// Where per-pixel 2-D features come from.
#[derive(Clone, Debug, Default)]
pub enum Source2d {
    #[default]
    Network,
    Precomputed(PrecomputedFeatures),
}

/// All trainable networks and their parameters.
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub enc2d: Encoder2d,
    pub enc3d: Encoder3d,
    pub expert: Expert,
    pub source2d: Source2d,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let (d, h, c) = (config.feature_dim, config.head_hidden, config.classes);
        let enc2d = Encoder2d::new(&mut store, &config.encoder2d, d, h, c, &mut rng)?;
        let enc3d = Encoder3d::new(&mut store, &config.encoder3d, d, h, c, &mut rng)?;
        let expert = Expert::new(&mut store, &config.expert, d, h, c, &mut rng)?;
        Ok(Self {
            config,
            store,
            enc2d,
            enc3d,
            expert,
            source2d: Source2d::Network,
        })
    }

    /// An empty map matching this model's feature size and resolution.
    pub fn new_map(&self) -> Result<SceneMap> {
        SceneMap::new(self.config.resolution, self.config.feature_dim)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_file(path, &self.store.named_values())
    }

    /// Builds the networks for `config` and overwrites them with stored
    /// weights. Every parameter must be present.
    pub fn load(config: ModelConfig, path: &Path) -> Result<Self> {
        let mut model = Self::new(config)?;
        let entries = load_file(path)?;
        let loaded = model.store.load_values(&entries)?;
        if loaded != model.store.len() {
            return Err(Error::Missing(format!(
                "checkpoint holds {loaded} of {} parameters",
                model.store.len()
            )));
        }
        Ok(model)
    }

    /// Records the complete per-frame computation on `g`. The previous map
    /// state enters as a constant. Returns `None` when the frame has no
    /// valid depth within the cutoff.
    pub fn frame_forward(&self, g: &mut Graph, map: &SceneMap, frame: &Frame) -> Result<Option<FrameForward>> {
        self.frame_forward_with(g, &self.store, map, frame)
    }

    /// [`Model::frame_forward`] with parameter values taken from `store`.
    pub fn frame_forward_with(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        map: &SceneMap,
        frame: &Frame,
    ) -> Result<Option<FrameForward>> {
        if map.feature_dim() != self.config.feature_dim || map.resolution() != self.config.resolution {
            return Err(Error::Config(format!(
                "map ({} features at {} m) does not match the model ({} at {} m)",
                map.feature_dim(),
                map.resolution(),
                self.config.feature_dim,
                self.config.resolution
            )));
        }
        let intr = &frame.intrinsics;
        let lifted = lift_pixels(&frame.depth, intr, &frame.pose, self.config.depth_cutoff);
        if lifted.is_empty() {
            return Ok(None);
        }
        let (features2d, logits2d) = match &self.source2d {
            Source2d::Network => {
                let out = self.enc2d.forward(g, store, frame)?;
                (out.features, out.logits)
            }
            Source2d::Precomputed(src) => {
                let (f, l) = src.load(frame.index, intr.pixel_count(), self.config.feature_dim)?;
                (g.constant(f), g.constant(l))
            }
        };
        let (keys, groups) = group_by_voxel(lifted.iter().map(|p| &p.position), self.config.resolution)?;
        let groups: Vec<Vec<u32>> = groups
            .into_iter()
            .map(|members| members.into_iter().map(|i| lifted[i as usize].pixel).collect())
            .collect();
        let segments = Arc::new(Segments {
            n_in: intr.pixel_count(),
            groups: groups.clone(),
        });
        let x2 = g.segment_mean(features2d, segments)?;
        let out3 = self.enc3d.forward(g, store, &keys, x2)?;
        let prev = map.crop(&keys)?;
        let p = g.constant(prev.features.clone());
        let expert = self.expert.forward(g, store, p, out3.features, x2)?;
        Ok(Some(FrameForward {
            keys,
            pixel_groups: groups,
            logits2d,
            x2,
            features3d: out3.features,
            logits3d: out3.logits,
            expert,
            prev,
        }))
    }
}

/// Graph handles of one frame's forward pass.
#[derive(Clone, Debug)]
pub struct FrameForward {
    /// Voxels touched by the frame, ascending.
    pub keys: Vec<VoxelKey>,
    /// Pixel indices falling into each voxel.
    pub pixel_groups: Vec<Vec<u32>>,
    pub logits2d: Var,
    pub x2: Var,
    pub features3d: Var,
    pub logits3d: Var,
    pub expert: ExpertOutput,
    pub prev: FeatureBlock,
}

impl FrameForward {
    /// The block to store: the expert's output features.
    pub fn output_block(&self, g: &Graph) -> FeatureBlock {
        FeatureBlock {
            keys: self.keys.clone(),
            features: g.value(self.expert.features).clone(),
            counts: self.prev.counts.clone(),
            novel: self.prev.novel.clone(),
        }
    }

    pub fn trace(&self, g: &Graph) -> AttentionTrace {
        AttentionTrace {
            layers: self.expert.weights.iter().map(|w| g.value(*w).clone()).collect(),
        }
    }

    /// Per-voxel labels of the three branches for this frame.
    pub fn branch_labels(&self, g: &Graph) -> [Vec<u32>; 3] {
        let rows = |t: &Tensor| (0..t.rows()).map(|i| argmax(t.row(i)) as u32).collect();
        [
            majority_labels(g.value(self.logits2d), &self.pixel_groups),
            rows(g.value(self.logits3d)),
            rows(g.value(self.expert.logits)),
        ]
    }
}

/// Majority of per-pixel argmax labels inside each group; ties go to the
/// lowest class.
pub fn majority_labels(pixel_logits: &Tensor, groups: &[Vec<u32>]) -> Vec<u32> {
    let c = pixel_logits.cols();
    let mut hist = vec![0u32; c];
    groups
        .iter()
        .map(|members| {
            hist.iter_mut().for_each(|h| *h = 0);
            for &p in members {
                hist[argmax(pixel_logits.row(p as usize))] += 1;
            }
            let best = *hist.iter().max().unwrap_or(&0);
            hist.iter().position(|h| *h == best).unwrap_or(0) as u32
        })
        .collect()
}

/// What one call to [`fuse_frame`] did.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FrameDiagnostics {
    pub frame: usize,
    pub block_size: usize,
    pub novel: usize,
    /// Mean (global, 3-D, 2-D) weight per layer.
    pub mean_attention: Vec<[f64; 3]>,
    /// Share of voxels where the 2-D / 3-D branch agrees with the expert.
    pub agreement_2d: f64,
    pub agreement_3d: f64,
    #[serde(skip)]
    pub keys: Vec<VoxelKey>,
    /// Per-voxel labels of the 2-D, 3-D and expert branches.
    #[serde(skip)]
    pub labels: [Vec<u32>; 3],
}

impl FrameDiagnostics {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("diagnostics serialize")
    }
}

/// Integrates one frame into `map`: encode, lift, voxelize, crop, fuse and
/// write back. A frame without valid depth leaves the map untouched.
pub fn fuse_frame(map: &mut SceneMap, frame: &Frame, model: &Model) -> Result<FrameDiagnostics> {
    let mut g = Graph::new();
    let Some(fwd) = model.frame_forward(&mut g, map, frame)? else {
        return Ok(FrameDiagnostics {
            frame: frame.index,
            ..Default::default()
        });
    };
    map.write_back(&fwd.output_block(&g))?;
    let trace = fwd.trace(&g);
    let labels = fwd.branch_labels(&g);
    let n = fwd.keys.len();
    let agree = |a: &[u32]| a.iter().zip(&labels[2]).filter(|(x, y)| x == y).count() as f64 / n as f64;
    Ok(FrameDiagnostics {
        frame: frame.index,
        block_size: n,
        novel: fwd.prev.novel.iter().filter(|v| **v).count(),
        mean_attention: (0..trace.layers.len()).map(|l| trace.mean_weights(l)).collect(),
        agreement_2d: agree(&labels[0]),
        agreement_3d: agree(&labels[1]),
        keys: fwd.keys,
        labels,
    })
}
