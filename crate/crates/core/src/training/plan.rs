use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ScheduleConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Scenes processed side by side; each contributes frames to every
    /// micro-batch.
    pub micro_batch: usize,
    /// Micro-batches whose gradients are summed into one optimizer step.
    pub accumulation: usize,
    /// Chance that a scene's map is cleared at the start of an epoch.
    pub reset_probability: f64,
    /// Consecutive frames a scene contributes to one micro-batch.
    pub frames_per_scene_step: usize,
    pub seed: u64,
    /// Epochs between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// `total_steps` is derived from the epoch plan when training starts.
    pub schedule: ScheduleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            micro_batch: 4,
            accumulation: 2,
            reset_probability: 0.3,
            frames_per_scene_step: 1,
            seed: 0,
            checkpoint_every: 10,
            schedule: ScheduleConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.reset_probability) {
            return Err(Error::Config("reset_probability must lie in [0, 1]".into()));
        }
        if self.micro_batch == 0 || self.accumulation == 0 || self.frames_per_scene_step == 0 {
            return Err(Error::Config("micro_batch, accumulation and frames_per_scene_step must be positive".into()));
        }
        let mut s = self.schedule.clone();
        s.total_steps = s.total_steps.max(1);
        s.validate()
    }

    pub fn effective_batch(&self) -> usize {
        self.micro_batch * self.accumulation
    }
}

/// One frame visit: `(scene, frame)`.
pub type Visit = (usize, usize);

/// Everything random about one epoch, drawn up front.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochPlan {
    /// Whether each scene's map is cleared before the epoch.
    pub resets: Vec<bool>,
    /// Frame order of each scene.
    pub orders: Vec<Vec<usize>>,
    /// Visits grouped into micro-batches, in processing order.
    pub micro_batches: Vec<Vec<Visit>>,
}

impl EpochPlan {
    /// Draws resets, then per-scene permutations, then the scene grouping.
    /// Scenes are split into groups of `micro_batch`; each micro-batch takes
    /// the next `frames_per_scene_step` frames of every scene in the group
    /// that still has frames.
    pub fn draw<R: Rng>(rng: &mut R, frame_counts: &[usize], cfg: &TrainConfig) -> Self {
        let resets = frame_counts.iter().map(|_| rng.random_bool(cfg.reset_probability)).collect();
        let orders: Vec<Vec<usize>> = frame_counts
            .iter()
            .map(|&n| {
                let mut o: Vec<usize> = (0..n).collect();
                o.shuffle(rng);
                o
            })
            .collect();
        let mut scenes: Vec<usize> = (0..frame_counts.len()).collect();
        scenes.shuffle(rng);
        let step = cfg.frames_per_scene_step;
        let mut micro_batches = Vec::new();
        for group in scenes.chunks(cfg.micro_batch) {
            let longest = group.iter().map(|s| frame_counts[*s]).max().unwrap_or(0);
            for start in (0..longest).step_by(step) {
                let batch: Vec<Visit> = group
                    .iter()
                    .flat_map(|&s| orders[s].iter().skip(start).take(step).map(move |&f| (s, f)))
                    .collect();
                micro_batches.push(batch);
            }
        }
        Self {
            resets,
            orders,
            micro_batches,
        }
    }

    pub fn optimizer_steps(&self, accumulation: usize) -> usize {
        self.micro_batches.len().div_ceil(accumulation)
    }
}

/// Upper bound on optimizer steps per epoch, exact when every scene has
/// the same number of frames.
pub fn steps_per_epoch(frame_counts: &[usize], cfg: &TrainConfig) -> usize {
    let groups = frame_counts.len().div_ceil(cfg.micro_batch);
    let longest = frame_counts.iter().copied().max().unwrap_or(0);
    (groups * longest.div_ceil(cfg.frames_per_scene_step)).div_ceil(cfg.accumulation)
}
