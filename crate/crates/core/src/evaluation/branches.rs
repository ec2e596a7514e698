use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::metrics::{ConfusionMatrix, Summary};
use crate::encoders::Frame;
use crate::error::{Error, Result};
use crate::expert::{fuse_frame, Model};
use crate::geometry::VoxelKey;
use crate::scene_map::{classify_map, SceneMap};
use crate::training::VoxelLabeler;

pub const BRANCH_NAMES: [&str; 3] = ["2d", "3d", "expert"];

/// One vote per frame per voxel for the 2-D and 3-D branches.
#[derive(Clone, Debug, Default)]
pub struct BranchVotes {
    classes: usize,
    votes: [HashMap<VoxelKey, Vec<u32>>; 2],
}

impl BranchVotes {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            votes: Default::default(),
        }
    }

    pub fn add(&mut self, branch: usize, keys: &[VoxelKey], labels: &[u32]) -> Result<()> {
        if keys.len() != labels.len() {
            return Err(Error::Shape(format!("{} labels for {} voxels", labels.len(), keys.len())));
        }
        let c = self.classes;
        for (k, l) in keys.iter().zip(labels) {
            if *l as usize >= c {
                return Err(Error::Shape(format!("vote {l} outside {c} classes")));
            }
            self.votes[branch].entry(*k).or_insert_with(|| vec![0; c])[*l as usize] += 1;
        }
        Ok(())
    }

    pub fn histogram(&self, branch: usize, key: &VoxelKey) -> Option<&[u32]> {
        self.votes[branch].get(key).map(|v| v.as_slice())
    }

    /// Majority vote; ties go to the lowest class.
    pub fn winner(&self, branch: usize, key: &VoxelKey) -> Option<u32> {
        let h = self.histogram(branch, key)?;
        let best = *h.iter().max()?;
        h.iter().position(|v| *v == best).map(|c| c as u32)
    }
}

/// Streams `frames` through the model into a fresh map and scores all three
/// branches on the voxels of the final map. Returns the map and one
/// confusion matrix per branch.
pub fn evaluate_branches<I>(
    model: &Model,
    frames: I,
    labels: &mut VoxelLabeler,
    ignore_label: u32,
) -> Result<(SceneMap, [ConfusionMatrix; 3])>
where
    I: IntoIterator<Item = Result<Frame>>,
{
    if labels.resolution() != model.config.resolution {
        return Err(Error::Config("ground truth and model resolutions differ".into()));
    }
    let c = model.config.classes;
    let mut map = model.new_map()?;
    let mut votes = BranchVotes::new(c);
    for frame in frames {
        let diag = fuse_frame(&mut map, &frame?, model)?;
        votes.add(0, &diag.keys, &diag.labels[0])?;
        votes.add(1, &diag.keys, &diag.labels[1])?;
    }
    classify_map(&mut map, &model.expert.head, &model.store)?;
    let mut cms = [0, 1, 2].map(|_| ConfusionMatrix::new(c, ignore_label));
    for key in map.sorted_keys() {
        let gt = labels.label(key);
        let record = map.get(&key).expect("key from map");
        let preds = [
            votes.winner(0, &key),
            votes.winner(1, &key),
            record.cached_label,
        ];
        for (cm, p) in cms.iter_mut().zip(preds) {
            let p = p.ok_or_else(|| Error::Missing(format!("no prediction for voxel {key:?}")))?;
            cm.accumulate(p, gt)?;
        }
    }
    Ok((map, cms))
}

#[derive(Clone, Debug, Serialize)]
pub struct BranchResult {
    pub name: String,
    pub summary: Summary,
    pub iou: Vec<Option<f64>>,
}

/// Per-branch metrics over one or more scenes.
#[derive(Clone, Debug, Serialize)]
pub struct BranchReport {
    pub class_names: Vec<String>,
    pub branches: Vec<BranchResult>,
}

impl BranchReport {
    pub fn new(matrices: &[ConfusionMatrix; 3], class_names: &[&str]) -> Result<Self> {
        let branches = matrices
            .iter()
            .zip(BRANCH_NAMES)
            .map(|(cm, name)| {
                Ok(BranchResult {
                    name: name.to_string(),
                    summary: cm.summary()?,
                    iou: cm.iou_per_class(),
                })
            })
            .collect::<Result<_>>()?;
        let classes = matrices[0].classes();
        let class_names = (0..classes)
            .map(|c| class_names.get(c).map_or_else(|| format!("class{c}"), |s| s.to_string()))
            .collect();
        Ok(Self { class_names, branches })
    }

    pub fn branch(&self, name: &str) -> Option<&BranchResult> {
        self.branches.iter().find(|b| b.name == name)
    }

    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "     -".to_string(), |v| format!("{:6.3}", v));
        let w = self.class_names.iter().map(|n| n.len()).max().unwrap_or(0).max(5);
        let mut s = format!("{:<w$}", "class");
        for b in &self.branches {
            let _ = write!(s, " {:>8}", b.name);
        }
        s.push('\n');
        for (c, name) in self.class_names.iter().enumerate() {
            let _ = write!(s, "{name:<w$}");
            for b in &self.branches {
                let _ = write!(s, "   {}", fmt(b.iou[c]));
            }
            s.push('\n');
        }
        for (label, get) in [
            ("mIoU", (|x: &Summary| x.miou) as fn(&Summary) -> f64),
            ("mAcc", |x| x.macc),
            ("wIoU", |x| x.wiou),
        ] {
            let _ = write!(s, "{label:<w$}");
            for b in &self.branches {
                let _ = write!(s, "   {:6.3}", get(&b.summary));
            }
            s.push('\n');
        }
        s
    }

    /// `branch.metric=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for b in &self.branches {
            let n = &b.name;
            let m = &b.summary;
            let _ = writeln!(s, "{n}.miou={}\n{n}.macc={}\n{n}.wiou={}\n{n}.points={}", m.miou, m.macc, m.wiou, m.points);
            for (c, v) in self.class_names.iter().zip(&b.iou) {
                if let Some(v) = v {
                    let _ = writeln!(s, "{n}.iou.{c}={v}");
                }
            }
        }
        s
    }
}
