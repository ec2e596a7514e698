use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::labels::VoxelLabeler;
use super::loss::{frame_loss, BranchStats, LossConfig};
use super::plan::{steps_per_epoch, EpochPlan, TrainConfig};
use crate::dataio::{render_sequence_frame, Sequence, SyntheticScene};
use crate::encoders::Frame;
use crate::error::{Error, Result};
use crate::expert::Model;
use crate::numerics::{onecycle_lr, AdamConfig, Graph};
use crate::scene_map::SceneMap;

/// A training scene: its frames and, when available, ground truth.
pub struct TrainScene {
    pub name: String,
    pub frames: Vec<Frame>,
    pub labels: Option<VoxelLabeler>,
}

impl TrainScene {
    /// Renders every frame of a synthetic scene in memory.
    pub fn from_synthetic(name: impl Into<String>, scene: &SyntheticScene, resolution: f64) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            frames: (0..scene.trajectory.len())
                .map(|i| render_sequence_frame(scene, i))
                .collect::<Result<_>>()?,
            labels: Some(VoxelLabeler::new(&scene.mesh, resolution)?),
        })
    }

    /// Loads a sequence directory; ground truth comes from its mesh when
    /// present.
    pub fn from_sequence(seq: &Sequence, resolution: f64) -> Result<Self> {
        let labels = match seq.mesh() {
            Ok(mesh) => Some(VoxelLabeler::new(&mesh, resolution)?),
            Err(Error::Missing(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            name: seq.root.display().to_string(),
            frames: (0..seq.len()).map(|n| seq.frame(n)).collect::<Result<_>>()?,
            labels,
        })
    }
}

/// Aggregates of one optimizer step (or one epoch).
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StepMetrics {
    pub epoch: usize,
    pub step: u64,
    /// Rate of the `core` group.
    pub lr: f64,
    pub frames: usize,
    pub loss: f64,
    pub loss_2d: f64,
    pub loss_3d: f64,
    pub loss_expert: f64,
    pub acc_2d: f64,
    pub acc_3d: f64,
    pub acc_expert: f64,
}

#[derive(Default)]
struct Tally {
    frames: usize,
    loss: [f64; 3],
    correct: [usize; 3],
    count: [usize; 3],
}

impl Tally {
    fn add(&mut self, stats: &[BranchStats; 3]) {
        self.frames += 1;
        for b in 0..3 {
            self.loss[b] += stats[b].loss;
            self.correct[b] += stats[b].correct;
            self.count[b] += stats[b].count;
        }
    }

    fn metrics(&self, epoch: usize, step: u64, lr: f64, loss_cfg: &LossConfig) -> StepMetrics {
        let n = self.frames.max(1) as f64;
        let l = self.loss.map(|x| x / n);
        let acc = |b: usize| self.correct[b] as f64 / self.count[b].max(1) as f64;
        StepMetrics {
            epoch,
            step,
            lr,
            frames: self.frames,
            loss: super::loss::composite_loss(l, loss_cfg),
            loss_2d: l[0],
            loss_3d: l[1],
            loss_expert: l[2],
            acc_2d: acc(0),
            acc_3d: acc(1),
            acc_expert: acc(2),
        }
    }
}

/// Sequential trainer: every scene keeps its map across epochs.
pub struct Trainer {
    pub model: Model,
    pub scenes: Vec<TrainScene>,
    pub maps: Vec<SceneMap>,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub epoch: usize,
    /// Every optimizer step so far.
    pub history: Vec<StepMetrics>,
    rng: ChaCha8Rng,
    adam: AdamConfig,
    log: Option<(PathBuf, fs::File)>,
}

impl Trainer {
    /// Scenes without ground truth are dropped with a warning.
    pub fn new(model: Model, scenes: Vec<TrainScene>, mut train: TrainConfig, loss: LossConfig) -> Result<Self> {
        train.validate()?;
        loss.validate()?;
        if loss.num_classes != model.config.classes {
            return Err(Error::Config(format!(
                "loss has {} classes, model {}",
                loss.num_classes, model.config.classes
            )));
        }
        let scenes: Vec<TrainScene> = scenes
            .into_iter()
            .filter(|s| {
                if s.labels.is_none() {
                    log::warn!("scene {} has no ground-truth labels; skipped", s.name);
                }
                s.labels.is_some()
            })
            .collect();
        if scenes.iter().all(|s| s.frames.is_empty()) {
            return Err(Error::Empty("no labelled training frames".into()));
        }
        let counts: Vec<usize> = scenes.iter().map(|s| s.frames.len()).collect();
        train.schedule.total_steps = (train.epochs.max(1) * steps_per_epoch(&counts, &train)).max(1) as u64;
        train.schedule.validate()?;
        let maps = scenes.iter().map(|_| model.new_map()).collect::<Result<_>>()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(train.seed),
            model,
            scenes,
            maps,
            train,
            loss,
            epoch: 0,
            history: Vec::new(),
            adam: AdamConfig::default(),
            log: None,
        })
    }

    /// Appends one JSON line per optimizer step to `dir/metrics.jsonl` and
    /// writes checkpoints into `dir`.
    pub fn log_to(&mut self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("metrics.jsonl"))?;
        self.log = Some((dir.to_path_buf(), file));
        Ok(())
    }

    fn frame_counts(&self) -> Vec<usize> {
        self.scenes.iter().map(|s| s.frames.len()).collect()
    }

    /// Processes one frame: forward, loss, backward into the gradient
    /// slots, then stores the fused features in the scene's map.
    fn visit(&mut self, scene: usize, frame: usize) -> Result<Option<[BranchStats; 3]>> {
        let mut g = Graph::new();
        let f = &self.scenes[scene].frames[frame];
        let Some(fwd) = self.model.frame_forward(&mut g, &self.maps[scene], f)? else {
            return Ok(None);
        };
        let labeler = self.scenes[scene].labels.as_mut().expect("labelled scene");
        let labels = labeler.labels(&fwd.keys);
        let (loss, stats) = frame_loss(&mut g, &fwd, &labels, &self.loss)?;
        g.backward_into(loss, &mut self.model.store)?;
        self.maps[scene].write_back(&fwd.output_block(&g))?;
        Ok(Some(stats))
    }

    fn optimizer_step(&mut self, tally: &Tally) -> Result<StepMetrics> {
        let schedule = &self.train.schedule;
        let step = self.model.store.step();
        if tally.frames > 0 {
            self.model.store.scale_grads(1.0 / tally.frames as f64);
            self.model
                .store
                .adam_step_grouped(|group| onecycle_lr(step, schedule.group_max_lr(group), schedule), self.adam)?;
        }
        self.model.store.zero_grad();
        let lr = onecycle_lr(step, schedule.group_max_lr("core"), schedule);
        let m = tally.metrics(self.epoch, step, lr, &self.loss);
        if let Some((_, file)) = &mut self.log {
            writeln!(file, "{}", serde_json::to_string(&m).expect("metrics serialize"))?;
        }
        Ok(m)
    }

    /// One pass over every frame of every scene.
    pub fn train_epoch(&mut self) -> Result<StepMetrics> {
        let counts = self.frame_counts();
        let plan = EpochPlan::draw(&mut self.rng, &counts, &self.train);
        for (map, reset) in self.maps.iter_mut().zip(&plan.resets) {
            if *reset {
                map.clear();
            }
        }
        let mut epoch_tally = Tally::default();
        for chunk in plan.micro_batches.chunks(self.train.accumulation) {
            let mut tally = Tally::default();
            for &(s, f) in chunk.iter().flatten() {
                if let Some(stats) = self.visit(s, f)? {
                    tally.add(&stats);
                    epoch_tally.add(&stats);
                }
            }
            let m = self.optimizer_step(&tally)?;
            self.history.push(m);
        }
        let last = self.history.last().map(|m| (m.step, m.lr)).unwrap_or_default();
        let summary = epoch_tally.metrics(self.epoch, last.0, last.1, &self.loss);
        log::info!(
            "epoch {} loss {:.4} acc 2d {:.3} 3d {:.3} expert {:.3}",
            self.epoch,
            summary.loss,
            summary.acc_2d,
            summary.acc_3d,
            summary.acc_expert
        );
        self.epoch += 1;
        if let Some((dir, _)) = &self.log {
            let every = self.train.checkpoint_every;
            if every > 0 && self.epoch % every == 0 {
                let dir = dir.clone();
                self.model.save(&dir.join(format!("checkpoint_{:04}.sftn", self.epoch)))?;
            }
        }
        Ok(summary)
    }

    /// Runs the remaining configured epochs; returns per-epoch summaries.
    pub fn run(&mut self) -> Result<Vec<StepMetrics>> {
        let mut out = Vec::new();
        while self.epoch < self.train.epochs {
            out.push(self.train_epoch()?);
        }
        if let Some((dir, _)) = &self.log {
            self.model.save(&dir.join("model.sftn"))?;
        }
        Ok(out)
    }
}
