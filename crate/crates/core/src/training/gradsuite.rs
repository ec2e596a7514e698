//! Finite-difference checks of every trainable component.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{frame_loss, LossConfig};
use crate::encoders::{AuxHead, Encoder2dConfig, Encoder3dConfig, Frame};
use crate::error::{Error, Result};
use crate::expert::{fuse_frame, ExpertConfig, Model, ModelConfig};
use crate::geometry::{ColorImage, DepthImage, Intrinsics, Pose, VoxelKey};
use crate::numerics::gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};

/// Result of one suite entry.
#[derive(Clone, Debug)]
pub struct SuiteCase {
    pub name: String,
    pub report: GradCheckReport,
}

impl SuiteCase {
    pub fn max_rel_error(&self) -> f64 {
        self.report.max_rel_error()
    }
}

fn suite_model(heads: usize) -> Result<Model> {
    Model::new(ModelConfig {
        feature_dim: 8,
        classes: 4,
        head_hidden: 6,
        resolution: 0.1,
        init_seed: 11,
        encoder2d: Encoder2dConfig {
            width: 4,
            context_width: 6,
        },
        encoder3d: Encoder3dConfig {
            blocks: 2,
            base_width: 4,
        },
        expert: ExpertConfig {
            layers: 2,
            hidden: 8,
            heads,
            ..Default::default()
        },
        ..Default::default()
    })
}

/// A tilted, bumpy surface seen from the origin.
fn suite_frame(index: usize) -> Result<Frame> {
    let (w, h) = (16, 12);
    let k = Intrinsics::new(12.0, 12.0, 7.5, 5.5, w, h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(index as u64 + 100);
    let color = ColorImage::from_vec(w, h, (0..w * h).map(|_| [rng.random(), rng.random(), rng.random()]).collect())?;
    let depth = (0..w * h)
        .map(|i| 0.8 + 0.03 * (i % w) as f64 + 0.02 * ((i / w) as f64).sin() + 0.05 * index as f64)
        .collect();
    Frame::new(color, DepthImage::from_vec(w, h, depth)?, k, Pose::identity(), index)
}

fn ids_with_prefix(store: &ParamStore, prefix: &str) -> Vec<ParamId> {
    store
        .iter()
        .filter(|(_, p)| p.name.starts_with(prefix))
        .map(|(id, _)| id)
        .collect()
}

/// `Σ w ⊙ x` for a fixed pseudo-random `w`, so every feature carries
/// gradient.
fn probe_sum(g: &mut Graph, x: Var) -> Result<Var> {
    let t = g.value(x);
    let w = Tensor::new(t.shape().to_vec(), (0..t.len()).map(|i| (i as f64 * 0.37 + 0.1).sin()).collect())?;
    let w = g.constant(w);
    let m = g.mul(x, w)?;
    Ok(g.sum(m))
}

fn targets(n: usize, classes: usize) -> Arc<Vec<Option<u32>>> {
    Arc::new((0..n).map(|i| (i % 5 != 4).then_some(((i * 7) % classes) as u32)).collect())
}

fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect())
}

/// Runs every check; each case reports its worst relative error.
pub fn gradient_suite(cfg: GradCheckConfig) -> Result<Vec<SuiteCase>> {
    let mut cases = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut model = suite_model(1)?;
    let frame = suite_frame(0)?;
    let pixel_targets = targets(frame.intrinsics.pixel_count(), 4);
    let only = ids_with_prefix(&model.store, "enc2d");
    let enc2d = &model.enc2d;
    let report = check_gradients(&mut model.store, Some(&only), cfg, |g, s| {
        let out = enc2d.forward(g, s, &frame)?;
        let fl = g.focal_loss(out.logits, pixel_targets.clone(), 1.0)?;
        let p = probe_sum(g, out.features)?;
        g.weighted_sum(&[(fl, 1.0), (p, 0.05)])
    })?;
    cases.push(SuiteCase {
        name: "2-D encoder and head".into(),
        report,
    });

    let mut keys: Vec<VoxelKey> = Vec::new();
    while keys.len() < 40 {
        let k = VoxelKey::new(rng.random_range(0..6), rng.random_range(0..6), rng.random_range(0..3))?;
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.sort();
    let input = random_tensor(keys.len(), 8, &mut rng)?;
    let voxel_targets = targets(keys.len(), 4);
    let only = ids_with_prefix(&model.store, "enc3d");
    let enc3d = &model.enc3d;
    let report = check_gradients(&mut model.store, Some(&only), cfg, |g, s| {
        let x = g.constant(input.clone());
        let out = enc3d.forward(g, s, &keys, x)?;
        let fl = g.focal_loss(out.logits, voxel_targets.clone(), 1.0)?;
        let p = probe_sum(g, out.features)?;
        g.weighted_sum(&[(fl, 1.0), (p, 0.05)])
    })?;
    cases.push(SuiteCase {
        name: "3-D encoder and head".into(),
        report,
    });

    for heads in [1, 2] {
        let mut model = suite_model(heads)?;
        let n = 12;
        let inputs = [0, 1, 2].map(|_| random_tensor(n, 8, &mut rng));
        let [a, b, c] = inputs;
        let (a, b, c) = (a?, b?, c?);
        let voxel_targets = targets(n, 4);
        let only = ids_with_prefix(&model.store, "expert");
        let expert = &model.expert;
        let report = check_gradients(&mut model.store, Some(&only), cfg, |g, s| {
            let (p, x3, x2) = (g.constant(a.clone()), g.constant(b.clone()), g.constant(c.clone()));
            let out = expert.forward(g, s, p, x3, x2)?;
            let fl = g.focal_loss(out.logits, voxel_targets.clone(), 1.0)?;
            let p = probe_sum(g, out.features)?;
            g.weighted_sum(&[(fl, 1.0), (p, 0.05)])
        })?;
        cases.push(SuiteCase {
            name: format!("expert, {heads} head(s)"),
            report,
        });
    }

    let mut store = ParamStore::new();
    let head = AuxHead::new(&mut store, "head", 8, 6, 4, &mut rng)?;
    let x = random_tensor(10, 8, &mut rng)?;
    let head_targets = targets(10, 4);
    let report = check_gradients(&mut store, None, cfg, |g, s| {
        let xv = g.constant(x.clone());
        let logits = head.forward(g, s, xv)?;
        g.focal_loss(logits, head_targets.clone(), 2.0)
    })?;
    cases.push(SuiteCase {
        name: "auxiliary head".into(),
        report,
    });

    for gamma in [0.0, 1.0, 2.0] {
        let mut store = ParamStore::new();
        store.add("logits", random_tensor(9, 5, &mut rng)?)?;
        let t = targets(9, 5);
        let report = check_gradients(&mut store, None, cfg, |g, s| {
            let id = s.id("logits").expect("registered");
            let l = g.param(s, id);
            g.focal_loss(l, t.clone(), gamma)
        })?;
        cases.push(SuiteCase {
            name: format!("focal loss, gamma {gamma}"),
            report,
        });
    }

    let mut model = suite_model(1)?;
    let mut map = model.new_map()?;
    fuse_frame(&mut map, &suite_frame(1)?, &model)?;
    let frame = suite_frame(2)?;
    let loss_cfg = LossConfig {
        num_classes: 4,
        lambda_2d: 0.7,
        lambda_3d: 1.3,
        ..LossConfig::default()
    };
    let mut store = std::mem::take(&mut model.store);
    let report = check_gradients(&mut store, None, cfg, |g, s| {
        let fwd = model
            .frame_forward_with(g, s, &map, &frame)?
            .ok_or_else(|| Error::Empty("suite frame has no valid depth".into()))?;
        let labels: Vec<u32> = (0..fwd.keys.len()).map(|i| ((i * 3) % 4) as u32).collect();
        Ok(frame_loss(g, &fwd, &labels, &loss_cfg)?.0)
    })?;
    model.store = store;
    cases.push(SuiteCase {
        name: "composite frame loss through the full pipeline".into(),
        report,
    });
    Ok(cases)
}
