use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expert::FrameForward;
use crate::numerics::{argmax, focal_term, Graph, Tensor, Var};

/// Label excluded from every loss and metric.
pub const IGNORE_LABEL: u32 = 255;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_2d: f64,
    pub lambda_3d: f64,
    pub lambda_expert: f64,
    pub gamma: f64,
    pub ignore_label: u32,
    pub num_classes: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_2d: 1.0,
            lambda_3d: 1.0,
            lambda_expert: 1.0,
            gamma: 1.0,
            ignore_label: IGNORE_LABEL,
            num_classes: 8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_2d, self.lambda_3d, self.lambda_expert];
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) || !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config("loss weights and gamma must be finite and nonnegative".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        Ok(())
    }

    pub fn lambdas(&self) -> [f64; 3] {
        [self.lambda_2d, self.lambda_3d, self.lambda_expert]
    }

    /// Turns raw labels into loss targets, dropping the ignore label.
    pub fn targets(&self, labels: &[u32]) -> Result<Vec<Option<u32>>> {
        labels
            .iter()
            .map(|&l| {
                if l == self.ignore_label {
                    Ok(None)
                } else if (l as usize) < self.num_classes {
                    Ok(Some(l))
                } else {
                    Err(Error::Shape(format!("label {l} outside {} classes", self.num_classes)))
                }
            })
            .collect()
    }
}

/// `(1 − p_t)^γ · (−ln p_t)` for one probability vector.
pub fn focal_loss(probs: &[f64], target: u32, gamma: f64) -> Result<f64> {
    let p = probs
        .get(target as usize)
        .ok_or_else(|| Error::Shape(format!("target {target} outside {} classes", probs.len())))?;
    if !(gamma >= 0.0) {
        return Err(Error::Config("gamma must be nonnegative".into()));
    }
    Ok(focal_term(*p, gamma))
}

/// `λ_2D·L_2D + λ_3D·L_3D + λ_E·L_E`.
pub fn composite_loss(components: [f64; 3], cfg: &LossConfig) -> f64 {
    components.iter().zip(cfg.lambdas()).map(|(l, w)| l * w).sum()
}

/// Loss and accuracy of one branch over its targeted rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct BranchStats {
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
}

impl BranchStats {
    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }
}

fn accuracy(logits: &Tensor, targets: &[Option<u32>]) -> (usize, usize) {
    let mut hit = 0;
    let mut n = 0;
    for (i, t) in targets.iter().enumerate() {
        if let Some(t) = t {
            n += 1;
            hit += usize::from(argmax(logits.row(i)) == *t as usize);
        }
    }
    (hit, n)
}

/// Records the three-branch loss of a frame on `g`. Voxel labels follow
/// `fwd.keys`; each valid pixel takes the label of its voxel.
pub fn frame_loss(
    g: &mut Graph,
    fwd: &FrameForward,
    voxel_labels: &[u32],
    cfg: &LossConfig,
) -> Result<(Var, [BranchStats; 3])> {
    if voxel_labels.len() != fwd.keys.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} voxels",
            voxel_labels.len(),
            fwd.keys.len()
        )));
    }
    let voxel_targets = cfg.targets(voxel_labels)?;
    let mut pixel_targets = vec![None; g.value(fwd.logits2d).rows()];
    for (members, t) in fwd.pixel_groups.iter().zip(&voxel_targets) {
        for &p in members {
            pixel_targets[p as usize] = *t;
        }
    }
    let voxel_targets = Arc::new(voxel_targets);
    let branches = [
        (fwd.logits2d, Arc::new(pixel_targets)),
        (fwd.logits3d, voxel_targets.clone()),
        (fwd.expert.logits, voxel_targets),
    ];
    let mut terms = Vec::with_capacity(3);
    let mut stats = [BranchStats::default(); 3];
    for (b, ((logits, targets), w)) in branches.into_iter().zip(cfg.lambdas()).enumerate() {
        let (correct, count) = accuracy(g.value(logits), &targets);
        let l = g.focal_loss(logits, targets, cfg.gamma)?;
        stats[b] = BranchStats {
            loss: g.value(l).item()?,
            correct,
            count,
        };
        terms.push((l, w));
    }
    Ok((g.weighted_sum(&terms)?, stats))
}
