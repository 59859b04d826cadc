use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use liftpose::config::Config;
use liftpose::dataset::{load_pose_csv, save_pose_csv, PoseDataset, PoseKind};
use liftpose::model_file::{load_model, save_model, ModelFile};
use liftpose::pipeline::train_model;
use liftpose::protocol::{Metric, Protocol};
use liftpose::report::{mean, write_metrics_csv, write_sim_jsonl, EvalRow, FrameLine, LiftRecord, SimSummary};
use liftpose::topology::{load_topology, TopologyFile};
use liftpose::{bmap, core as lp};
use lp::beliefmap::extract_landmarks;
use lp::metrics::{mpjpe, pose_error_aligned};
use lp::preprocess::normalize_pose;
use lp::simulate::{fit_fusion_weights, run_stages_frame, TrainingFrame};
use lp::{Lifter, Pose2D};

#[derive(Parser, Debug)]
#[command(name = "liftpose", version, about = "Train 3D pose models and lift 2D landmarks to 3D.")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from a 3D pose CSV.
    Train(TrainArgs),
    /// Lift 2D landmarks (CSV or belief-stack files) to 3D.
    Lift(LiftArgs),
    /// Run the stage-wise refinement loop on synthetic observations.
    Simulate(SimArgs),
    /// Score predicted 3D poses against ground truth.
    Eval(EvalArgs),
    /// Summarize a model file.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    poses: PathBuf,
    /// Topology JSON; defaults to the built-in 17-joint skeleton.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Mixture size.
    #[arg(long)]
    k: Option<usize>,
    /// Basis size.
    #[arg(long)]
    j: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct LiftOptions {
    /// Rotation grid size.
    #[arg(long)]
    grid: Option<usize>,
    /// Golden-section refinement of the best grid angle.
    #[arg(long)]
    refine: bool,
    /// Report grid-only results.
    #[arg(long, conflicts_with = "refine")]
    no_refine: bool,
}

#[derive(Args, Debug)]
struct LiftArgs {
    #[arg(long)]
    model: PathBuf,
    /// 2D landmark CSV.
    #[arg(long, conflicts_with = "bmap", required_unless_present = "bmap")]
    input: Option<PathBuf>,
    /// Belief-stack files, one frame each.
    #[arg(long, num_args = 1..)]
    bmap: Vec<PathBuf>,
    #[command(flatten)]
    opts: LiftOptions,
    /// 3D pose CSV output.
    #[arg(long)]
    out: PathBuf,
    /// Lift results as JSON; defaults to the output path with a `.json` extension.
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimArgs {
    /// 3D pose CSV in the topology's joint order.
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    opts: LiftOptions,
    /// Fit the fusion weights on the input frames first.
    #[arg(long)]
    fit_weights: bool,
    /// Stage-trace JSON lines.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Evaluation protocol preset (1, 2 or 3).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    protocol: u8,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Train(a) => train(a, config, cli.seed),
        Command::Lift(a) => lift(a, config),
        Command::Simulate(a) => simulate(a, config, cli.seed),
        Command::Eval(a) => eval(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn topology(path: Option<&Path>) -> Result<(lp::SkeletonTopology, TopologyFile)> {
    Ok(match path {
        Some(p) => load_topology(p)?,
        None => {
            let f = TopologyFile::h36m17();
            (f.topology()?, f)
        }
    })
}

fn train(a: TrainArgs, mut config: Config, seed: u64) -> Result<()> {
    let (topo, topo_file) = topology(a.topology.as_deref())?;
    config.train.k = a.k.unwrap_or(config.train.k);
    config.train.j = a.j.unwrap_or(config.train.j);
    let data = load_pose_csv(&a.poses, topo.num_joints(), PoseKind::ThreeD)?;
    let (model, summary) = train_model(&data.poses3d(), &topo, &topo_file, &config.train, seed)?;
    save_model(&a.out, &model)?;
    let last = summary.alignment.rounds.last().map_or(f64::NAN, |r| r.objective);
    println!(
        "trained {} component(s), J = {}, on {} samples; alignment objective {:.6} after {} rounds",
        model.mixture.len(),
        config.train.j,
        summary.samples,
        last,
        summary.alignment.rounds.len()
    );
    Ok(())
}

fn lift_config(opts: &LiftOptions, config: &Config) -> lp::LiftConfig {
    let mut c = config.lift.lift_config();
    c.grid_n = opts.grid.unwrap_or(c.grid_n);
    if opts.refine {
        c.refine = true;
    }
    if opts.no_refine {
        c.refine = false;
    }
    c
}

fn lift(a: LiftArgs, config: Config) -> Result<()> {
    let model = load_model(&a.model)?;
    let joints = model.mixture.num_joints();
    let (ids, frames): (Vec<String>, Vec<Pose2D>) = match &a.input {
        Some(p) => {
            let data = load_pose_csv(p, joints, PoseKind::TwoD)?;
            let ids = data.frames.iter().map(|f| f.frame_id.clone()).collect();
            (ids, data.poses2d())
        }
        None => {
            let mut ids = Vec::new();
            let mut frames = Vec::new();
            for p in &a.bmap {
                let stack = bmap::load_bmap(p)?;
                if stack.landmarks() != joints {
                    bail!("{}: {} landmark channels, model has {joints} joints", p.display(), stack.landmarks());
                }
                frames.push(extract_landmarks(&stack).with_context(|| p.display().to_string())?);
                ids.push(p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()));
            }
            (ids, frames)
        }
    };
    let cfg = lift_config(&a.opts, &config);
    let lifter = Lifter::new(&model.mixture, &config.lift.camera.camera(), cfg);
    let start = Instant::now();
    let results = lifter.lift_batch(&frames);
    let elapsed = start.elapsed().as_secs_f64();
    let mut poses = Vec::with_capacity(results.len());
    let mut records = Vec::with_capacity(results.len());
    for (id, r) in ids.iter().zip(&results) {
        let r = r.as_ref().map_err(|e| anyhow::anyhow!("frame {id}: {e}"))?;
        poses.push(r.pose3d.clone());
        records.push(LiftRecord::new(id, r));
    }
    let mut out = PoseDataset::from_poses3d(&poses)?;
    for (f, id) in out.frames.iter_mut().zip(&ids) {
        f.frame_id = id.clone();
    }
    if out.is_empty() {
        out.joints = joints;
    }
    save_pose_csv(&a.out, &out)?;
    let json_path = a.results.unwrap_or_else(|| a.out.with_extension("json"));
    let mut w = BufWriter::new(File::create(&json_path).with_context(|| json_path.display().to_string())?);
    serde_json::to_writer_pretty(&mut w, &records)?;
    w.write_all(b"\n")?;
    w.flush()?;
    eprintln!(
        "lifted {} frames in {:.3} s ({:.0} frames/s)",
        frames.len(),
        elapsed,
        frames.len() as f64 / elapsed.max(1e-12)
    );
    Ok(())
}

fn simulate(a: SimArgs, config: Config, seed: u64) -> Result<()> {
    let model = load_model(&a.model)?;
    let topo = model.skeleton();
    let data = load_pose_csv(&a.poses, topo.num_joints(), PoseKind::ThreeD)?;
    let gts = data
        .poses3d()
        .iter()
        .enumerate()
        .map(|(i, p)| normalize_pose(p, &topo).with_context(|| format!("frame {}", data.frames[i].frame_id)))
        .collect::<Result<Vec<_>>>()?;
    let camera = config.lift.camera.camera();
    let lifter = Lifter::new(&model.mixture, &camera, lift_config(&a.opts, &config));
    let mut sim = config.sim.sim_config(seed)?;
    if a.fit_weights || config.sim.fit_weights {
        let frames: Vec<_> = gts
            .iter()
            .enumerate()
            .map(|(i, g)| TrainingFrame::synthesize(g, &camera, &sim, i as u64))
            .collect();
        sim.fusion_weights = fit_fusion_weights(&frames, &lifter, &camera, &sim)?.weights;
    }
    let mut lines = Vec::with_capacity(gts.len());
    for (i, g) in gts.iter().enumerate() {
        let trace = run_stages_frame(g, &lifter, &camera, &sim, i as u64)
            .with_context(|| format!("frame {}", data.frames[i].frame_id))?;
        lines.push(FrameLine::new(&data.frames[i].frame_id, &trace));
    }
    let summary = SimSummary::new(&lines, sim.fusion_weights.iter().map(|w| w.value()).collect());
    let file = File::create(&a.out).with_context(|| a.out.display().to_string())?;
    write_sim_jsonl(BufWriter::new(file), &lines, &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let (topo, topo_file) = topology(a.topology.as_deref())?;
    let protocol = Protocol::preset(a.protocol).expect("range-checked by the parser");
    let l = topo.num_joints();
    let gt = protocol.apply(&load_pose_csv(&a.gt, l, PoseKind::ThreeD)?);
    let pred = load_pose_csv(&a.pred, l, PoseKind::ThreeD)?;
    let by_id: std::collections::HashMap<&str, &liftpose::dataset::Frame> =
        pred.frames.iter().map(|f| (f.frame_id.as_str(), f)).collect();
    let subset = topo_file.subset();
    let mut rows = Vec::with_capacity(gt.len());
    for g in &gt.frames {
        let Some(p) = by_id.get(g.frame_id.as_str()) else {
            bail!("no prediction for frame {}", g.frame_id);
        };
        let (gp, pp) = (lp::Pose3D::from_column_slice(&g.coords), lp::Pose3D::from_column_slice(&p.coords));
        rows.push(EvalRow {
            frame_id: g.frame_id.clone(),
            action_label: g.action.clone().unwrap_or_default(),
            mpjpe: mpjpe(&pp, &gp)?,
            aligned_error: pose_error_aligned(&pp, &gp, &subset).with_context(|| format!("frame {}", g.frame_id))?,
        });
    }
    let file = File::create(&a.out).with_context(|| a.out.display().to_string())?;
    write_metrics_csv(BufWriter::new(file), &rows)?;
    let headline: Vec<f64> = rows
        .iter()
        .map(|r| match protocol.metric {
            Metric::Raw => r.mpjpe,
            Metric::Aligned => r.aligned_error,
        })
        .collect();
    let name = match protocol.metric {
        Metric::Raw => "mean per-joint error",
        Metric::Aligned => "mean aligned error",
    };
    println!("protocol {}: {} frames, {name} {:.6}", protocol.number, rows.len(), mean(&headline));
    Ok(())
}

fn describe(m: &ModelFile) -> String {
    let mut s = format!(
        "model file version {}\njoints: {}\ncomponents: {}\nbasis size J: {}\nregularizer: {:?}\nschedule: {:?}\nseed: {}\n",
        m.version,
        m.topology.joints.len(),
        m.mixture.len(),
        m.training_meta.j,
        m.training_meta.regularizer_mode,
        m.training_meta.schedule,
        m.training_meta.seed,
    );
    for (k, (c, w)) in m.mixture.components().iter().zip(m.mixture.weights()).enumerate() {
        let sig: Vec<String> = c.sigma().iter().map(|v| format!("{v:.4}")).collect();
        s.push_str(&format!(
            "component {k}: weight {w:.4}, noise variance {:.3e}, sigma [{}]\n",
            c.noise_var(),
            sig.join(", ")
        ));
    }
    s
}

fn inspect(a: InspectArgs) -> Result<()> {
    print!("{}", describe(&load_model(&a.model)?));
    Ok(())
}
