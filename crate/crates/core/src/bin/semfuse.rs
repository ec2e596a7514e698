use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semfuse::dataio::{generate_scene, write_synthetic, RunConfig, Sequence, CLASS_NAMES};
use semfuse::evaluation::{evaluate_branches, BranchReport, ConfusionMatrix};
use semfuse::expert::{fuse_frame, Model};
use semfuse::numerics::gradcheck::GradCheckConfig;
use semfuse::scene_map::{self, classify_map};
use semfuse::training::{gradient_suite, TrainScene, Trainer, VoxelLabeler};
use semfuse::{Error, Result};

/// Online semantic mapping with a learned per-voxel fusion expert.
#[derive(Parser)]
#[command(name = "semfuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes and write them as sequences.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write scenes `seed..seed+count` into `out/scene_SEED` instead of
        /// the configured train/eval split.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        count: u64,
    },
    /// Train all networks.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of training sequences; scenes are generated in memory
        /// from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory for the config snapshot, metrics and checkpoints.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Stream a sequence into a map.
    Fuse {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sequence: PathBuf,
        /// Map snapshot to write.
        #[arg(long)]
        out: PathBuf,
        /// Per-frame diagnostics as JSON lines.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Score the 2-D, 3-D and expert branches.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sequence directories, or a directory holding them.
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        /// Also write `branch.metric=value` lines here.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Write a map snapshot as a coloured PLY point cloud.
    Export {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// `dir` itself when it is a sequence, else its subdirectories that are.
fn sequence_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join("intrinsics.txt").exists() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("intrinsics.txt").exists())
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::Empty(format!("no sequences found in {}", dir.display())));
    }
    Ok(out)
}

fn synth(out: &Path, cfg: &RunConfig, seed: Option<u64>, count: u64) -> Result<()> {
    let spec = &cfg.data.scene;
    let jobs: Vec<(PathBuf, u64)> = match seed {
        Some(s) => (s..s + count).map(|s| (out.join(format!("scene_{s:04}")), s)).collect(),
        None => {
            let train = cfg.data.train_seeds().map(|s| (out.join("train").join(format!("scene_{s:04}")), s));
            let eval = cfg.data.eval_seeds().map(|s| (out.join("eval").join(format!("scene_{s:04}")), s));
            train.chain(eval).collect()
        }
    };
    for (dir, s) in jobs {
        let scene = generate_scene(s, spec)?;
        let seq = write_synthetic(&dir, &scene)?;
        println!("{}: {} frames", dir.display(), seq.len());
    }
    Ok(())
}

fn train(cfg: RunConfig, data: Option<&Path>, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    cfg.save(&out.join("config.toml"))?;
    log::info!("effective configuration:\n{}", cfg.to_toml());
    let res = cfg.model.resolution;
    let scenes = match data {
        Some(dir) => {
            let root = if dir.join("train").is_dir() { dir.join("train") } else { dir.to_path_buf() };
            sequence_dirs(&root)?
                .iter()
                .map(|d| TrainScene::from_sequence(&Sequence::open(d)?, res))
                .collect::<Result<Vec<_>>>()?
        }
        None => cfg
            .data
            .train_seeds()
            .map(|s| TrainScene::from_synthetic(format!("scene_{s:04}"), &generate_scene(s, &cfg.data.scene)?, res))
            .collect::<Result<Vec<_>>>()?,
    };
    let model = Model::new(cfg.model.clone())?;
    let mut trainer = Trainer::new(model, scenes, cfg.train.clone(), cfg.loss.clone())?;
    trainer.log_to(out)?;
    for m in trainer.run()? {
        println!(
            "epoch {:3}  loss {:.4}  acc 2d {:.3}  3d {:.3}  expert {:.3}",
            m.epoch, m.loss, m.acc_2d, m.acc_3d, m.acc_expert
        );
    }
    println!("model written to {}", out.join("model.sftn").display());
    Ok(())
}

fn fuse(cfg: RunConfig, checkpoint: &Path, sequence: &Path, out: &Path, diagnostics: Option<&Path>) -> Result<()> {
    let seq = Sequence::open(sequence)?;
    let model = Model::load(cfg.model, checkpoint)?;
    let mut map = model.new_map()?;
    let mut log = String::new();
    for n in 0..seq.len() {
        let d = fuse_frame(&mut map, &seq.frame(n)?, &model)?;
        log.push_str(&d.to_json());
        log.push('\n');
    }
    classify_map(&mut map, &model.expert.head, &model.store)?;
    scene_map::save(&map, out)?;
    if let Some(p) = diagnostics {
        fs::write(p, log)?;
    }
    println!("{} frames fused into {} voxels", seq.len(), map.len());
    Ok(())
}

fn eval(cfg: RunConfig, checkpoint: &Path, data: &[PathBuf], metrics: Option<&Path>) -> Result<()> {
    let model = Model::load(cfg.model.clone(), checkpoint)?;
    let mut dirs = Vec::new();
    for d in data {
        let root = if d.join("eval").is_dir() { d.join("eval") } else { d.clone() };
        dirs.extend(sequence_dirs(&root)?);
    }
    let c = cfg.model.classes;
    let mut total = [0, 1, 2].map(|_| ConfusionMatrix::new(c, cfg.loss.ignore_label));
    for dir in &dirs {
        let seq = Sequence::open(dir)?;
        let mut labels = VoxelLabeler::new(&seq.mesh()?, cfg.model.resolution)?;
        let (_, cms) = evaluate_branches(&model, (0..seq.len()).map(|n| seq.frame(n)), &mut labels, cfg.loss.ignore_label)?;
        for (t, cm) in total.iter_mut().zip(&cms) {
            t.merge(cm)?;
        }
    }
    let report = BranchReport::new(&total, &CLASS_NAMES)?;
    print!("{}", report.to_table());
    if let Some(p) = metrics {
        fs::write(p, report.to_key_values())?;
    }
    Ok(())
}

fn export(map: &Path, out: &Path) -> Result<()> {
    let map = scene_map::load(map)?;
    let mut w = std::io::BufWriter::new(fs::File::create(out)?);
    scene_map::write_ply(&map, &mut w)?;
    println!("{} voxels written", map.len());
    Ok(())
}

fn gradcheck(tolerance: f64) -> Result<bool> {
    let mut ok = true;
    for case in gradient_suite(GradCheckConfig::default())? {
        let err = case.max_rel_error();
        let pass = err < tolerance;
        ok &= pass;
        println!("{} {:<50} max relative error {:.2e}", if pass { "PASS" } else { "FAIL" }, case.name, err);
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth { out, config, seed, count } => synth(&out, &load_config(config.as_deref())?, seed, count)?,
        Command::Train { config, data, out, epochs } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            train(cfg, data.as_deref(), &out)?
        }
        Command::Fuse {
            config,
            checkpoint,
            sequence,
            out,
            diagnostics,
        } => fuse(load_config(config.as_deref())?, &checkpoint, &sequence, &out, diagnostics.as_deref())?,
        Command::Eval {
            config,
            checkpoint,
            data,
            metrics,
        } => eval(load_config(config.as_deref())?, &checkpoint, &data, metrics.as_deref())?,
        Command::Export { map, out } => export(&map, &out)?,
        Command::Gradcheck { tolerance } => return gradcheck(tolerance),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
