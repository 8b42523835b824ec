//! `mapeval`: trajectory and map evaluation from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mapeval::align::AlignMode;
use mapeval::assoc::{floor_threshold, RaycastOptions, RotationOrder};
use mapeval::gtmap::{build_gt_map, cloud_to_2d, project_to_2d, DepthFrame};
use mapeval::io::{load_cloud, load_depth, load_trajectory, save_cloud, save_depth, save_grid_pgm, save_trajectory};
use mapeval::metrics::iou2d;
use mapeval::synth::{SynthBundle, SynthConfig};
use mapeval::{evaluate, Error, EvalInput, EvalOptions, MetricReport, Result, VoxelGrid};

#[derive(Debug, Parser)]
#[command(name = "mapeval", version, about = "Evaluate SLAM trajectories and maps against ground truth")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// ATE and RPE between two trajectory files.
    EvalTraj(EvalTrajArgs),
    /// AME between a ground-truth and a predicted map.
    EvalMap(EvalMapArgs),
    /// IoU of the 2D projections of two maps.
    Iou(IouArgs),
    /// Voxel map from a directory of depth PGMs and their trajectory.
    BuildGtMap(BuildArgs),
    /// Generate a synthetic scene, trajectory, depth frames and SLAM output.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Print the report as JSON instead of key=value lines.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct AlignArgs {
    /// Maximum timestamp difference when pairing poses, seconds.
    #[arg(long, default_value_t = mapeval::align::DEFAULT_MAX_DT)]
    max_dt: f64,
    /// umeyama, umeyama-scaled, first-pose or none.
    #[arg(long, default_value = "umeyama")]
    align: AlignMode,
    /// Also estimate scale (turns umeyama into umeyama-scaled).
    #[arg(long)]
    with_scale: bool,
}

impl AlignArgs {
    fn mode(&self) -> AlignMode {
        match self.align {
            AlignMode::Umeyama if self.with_scale => AlignMode::UmeyamaScaled,
            mode => mode,
        }
    }
}

#[derive(Debug, Args)]
struct EvalTrajArgs {
    gt: PathBuf,
    est: PathBuf,
    #[command(flatten)]
    align: AlignArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum AssocKind {
    Nn,
    Raycast,
    Both,
}

#[derive(Debug, Args)]
struct EvalMapArgs {
    /// Ground-truth map (.pcd or .xyz).
    #[arg(required_unless_present = "sample")]
    gt_map: Option<PathBuf>,
    /// Predicted map (.pcd or .xyz).
    #[arg(required_unless_present = "sample")]
    pred_map: Option<PathBuf>,
    gt_traj: Option<PathBuf>,
    pred_traj: Option<PathBuf>,
    /// Read gt_map, est_map, gt_traj and est_traj files from a sample directory.
    #[arg(long, conflicts_with_all = ["gt_map", "pred_map", "gt_traj", "pred_traj"])]
    sample: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "nn")]
    assoc: AssocKind,
    /// Drop points with z at or below this height from both maps; `auto`
    /// uses 0.1 m above the floor estimated from the ground-truth trajectory.
    #[arg(long, value_name = "Z")]
    remove_floor: Option<String>,
    /// Camera height above the floor, for `--remove-floor auto`.
    #[arg(long, default_value_t = 0.0)]
    mount_height: f64,
    /// Ray length limit for ray-cast association, meters.
    #[arg(long, default_value_t = 10.0)]
    max_range: f64,
    /// Compose rotations as M(q) M(q*)^-1 instead of M(q*)^-1 M(q).
    #[arg(long)]
    swap_rotation: bool,
    /// Tag untagged predicted points with the nearest pose even if it faces away.
    #[arg(long)]
    no_fov_check: bool,
    #[arg(long, default_value_t = VoxelGrid::DEFAULT_CELL_SIZE)]
    cell: f64,
    #[command(flatten)]
    align: AlignArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct IouArgs {
    map_a: PathBuf,
    map_b: PathBuf,
    #[arg(long, default_value_t = VoxelGrid::DEFAULT_CELL_SIZE)]
    cell: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct BuildArgs {
    /// Directory of 16-bit millimeter PGM depth frames; sorted by file name,
    /// the i-th frame belongs to the i-th trajectory pose.
    depth_dir: PathBuf,
    traj: PathBuf,
    out: PathBuf,
    #[arg(long, default_value_t = VoxelGrid::DEFAULT_CELL_SIZE)]
    cell: f64,
    #[arg(long, default_value_t = 10.0)]
    max_range: f64,
    /// Also write the 2D projection as a PGM image.
    #[arg(long, value_name = "FILE")]
    grid_pgm: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// TOML key-value spec; an empty file gives the defaults.
    spec: PathBuf,
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("mapeval: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Parse { .. } | Error::Ordering { .. } | Error::PcdHeader { .. } | Error::Pgm(_) => 2,
        Error::NoOverlap { .. } => 3,
        Error::UndefinedMetric(_) => 4,
        _ => 1,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::EvalTraj(args) => eval_traj(args),
        Command::EvalMap(args) => eval_map(args),
        Command::Iou(args) => iou(args),
        Command::BuildGtMap(args) => build(args),
        Command::Synth(args) => synth(args),
    }
}

fn print_report(report: &MetricReport, output: &OutputArgs) {
    if output.json {
        println!("{}", report.to_json_pretty());
    } else {
        print!("{report}");
    }
}

fn eval_traj(args: EvalTrajArgs) -> Result<()> {
    let gt = EvalInput { trajectory: Some(load_trajectory(&args.gt)?), map: None };
    let est = EvalInput { trajectory: Some(load_trajectory(&args.est)?), map: None };
    let options = EvalOptions {
        max_dt: args.align.max_dt,
        align: args.align.mode(),
        ..EvalOptions::default()
    };
    print_report(&evaluate(&gt, &est, &options)?, &args.output);
    Ok(())
}

/// Finds `<stem>.pcd` or `<stem>.xyz` / `<stem>.txt` in a sample directory.
fn sample_file(dir: &Path, stem: &str, extensions: &[&str]) -> Result<PathBuf> {
    extensions
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::invalid(format!("{} has no {stem}.{{{}}}", dir.display(), extensions.join(","))))
}

fn eval_map(args: EvalMapArgs) -> Result<()> {
    let (gt_map, pred_map, gt_traj, pred_traj) = match &args.sample {
        Some(dir) => (
            sample_file(dir, "gt_map", &["pcd", "xyz"])?,
            sample_file(dir, "est_map", &["pcd", "xyz"])?,
            Some(sample_file(dir, "gt_traj", &["txt"])?),
            Some(sample_file(dir, "est_traj", &["txt"])?),
        ),
        None => (
            args.gt_map.clone().expect("required by clap"),
            args.pred_map.clone().expect("required by clap"),
            args.gt_traj.clone(),
            args.pred_traj.clone(),
        ),
    };
    let gt = EvalInput {
        trajectory: gt_traj.map(load_trajectory).transpose()?,
        map: Some(load_cloud(&gt_map)?),
    };
    let est = EvalInput {
        trajectory: pred_traj.map(load_trajectory).transpose()?,
        map: Some(load_cloud(&pred_map)?),
    };
    let floor_z = match args.remove_floor.as_deref() {
        None => None,
        Some("auto") => {
            let traj = gt.trajectory.as_ref().ok_or_else(|| {
                Error::invalid("--remove-floor auto needs the ground-truth trajectory")
            })?;
            Some(floor_threshold(traj, args.mount_height)?)
        }
        Some(z) => Some(
            z.parse::<f64>()
                .ok()
                .filter(|z| z.is_finite())
                .ok_or_else(|| Error::invalid(format!("--remove-floor expects a height or `auto`, got {z}")))?,
        ),
    };
    let options = EvalOptions {
        max_dt: args.align.max_dt,
        align: args.align.mode(),
        nn: args.assoc != AssocKind::Raycast,
        raycast: args.assoc != AssocKind::Nn,
        iou: false,
        floor_z,
        raycast_options: RaycastOptions {
            max_range: args.max_range,
            max_dt: args.align.max_dt,
            rotation_order: if args.swap_rotation { RotationOrder::Swapped } else { RotationOrder::AsPrinted },
        },
        cell_size: args.cell,
        fov_check: !args.no_fov_check,
    };
    print_report(&evaluate(&gt, &est, &options)?, &args.output);
    Ok(())
}

fn iou(args: IouArgs) -> Result<()> {
    let a = cloud_to_2d(&load_cloud(&args.map_a)?, args.cell)?;
    let b = cloud_to_2d(&load_cloud(&args.map_b)?, args.cell)?;
    let report = MetricReport {
        iou: Some(iou2d(&a, &b)?),
        alignment_mode: AlignMode::None.label().to_string(),
        ..MetricReport::default()
    };
    print_report(&report, &args.output);
    Ok(())
}

fn depth_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::from(e).context(dir.display().to_string()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn build(args: BuildArgs) -> Result<()> {
    let trajectory = load_trajectory(&args.traj)?;
    let files = depth_files(&args.depth_dir)?;
    if files.len() != trajectory.len() {
        return Err(Error::invalid(format!(
            "{} depth frames in {} but {} poses in {}",
            files.len(),
            args.depth_dir.display(),
            trajectory.len(),
            args.traj.display()
        )));
    }
    let frames = files
        .iter()
        .zip(trajectory.iter())
        .enumerate()
        .map(|(i, (path, pose))| {
            let (width, height, depth) = load_depth(path)?;
            Ok(DepthFrame::new(width, height, depth, *pose, args.max_range)
                .map_err(|e| e.context(path.display().to_string()))?
                .with_frame_id(i))
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = build_gt_map(&frames, args.cell)?;
    save_cloud(&args.out, &grid.centers())?;
    if let Some(pgm) = &args.grid_pgm {
        save_grid_pgm(pgm, &project_to_2d(&grid))?;
    }
    println!("frames={}", frames.len());
    println!("cells={}", grid.len());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let text = fs::read_to_string(&args.spec).map_err(|e| Error::from(e).context(args.spec.display().to_string()))?;
    let config: SynthConfig = text.parse().map_err(|e: Error| e.context(args.spec.display().to_string()))?;
    let bundle = SynthBundle::generate(&config)?;
    let out = &args.out_dir;
    let depth_dir = out.join("depth");
    fs::create_dir_all(&depth_dir).map_err(|e| Error::from(e).context(depth_dir.display().to_string()))?;
    for frame in &bundle.frames {
        let path = depth_dir.join(format!("{:06}.pgm", frame.frame_id()));
        save_depth(path, frame.width(), frame.height(), frame.depth())?;
    }
    save_cloud(out.join("scene.pcd"), &bundle.scene.centers())?;
    save_cloud(out.join("gt_map.pcd"), &bundle.gt_cloud)?;
    save_cloud(out.join("est_map.pcd"), &bundle.est_cloud)?;
    save_trajectory(out.join("gt_traj.txt"), &bundle.trajectory)?;
    save_trajectory(out.join("est_traj.txt"), &bundle.est_trajectory)?;
    save_grid_pgm(out.join("gt_map_2d.pgm"), &project_to_2d(&bundle.gt_map))?;
    println!("frames={}", bundle.frames.len());
    println!("scene_cells={}", bundle.scene.len());
    println!("gt_cells={}", bundle.gt_map.len());
    Ok(())
}
