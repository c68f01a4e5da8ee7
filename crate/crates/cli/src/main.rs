mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use xmodal_core::gradcheck::CheckTarget;
use xmodal_core::synthscene::ConfidenceMode;

use commands::{CliError, CliResult};
use config::{ConfigFile, Direction};

/// Environment variable capping worker threads (0 or unset: one per core).
const THREADS_ENV: &str = "XMODAL_THREADS";

#[derive(Parser)]
#[command(
    name = "xmodal",
    version,
    about = "RGB to thermal depth distillation toolkit"
)]
struct Cli {
    /// JSON config with one section per subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; the resolved config is written here as config.json.
    #[arg(long, global = true, default_value = "xmodal-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Warp depth between the RGB and thermal cameras.
    Warp(WarpArgs),
    /// Standard and depth-binned metrics as CSV.
    Eval(EvalArgs),
    /// Analytic vs finite-difference gradient check of every loss.
    Gradcheck(GradcheckArgs),
    /// Synthetic confidence-weighted distillation experiment.
    DistillDemo(DistillArgs),
    /// Photometric and stereo cleanup of LiDAR ground truth.
    FilterLidar(FilterArgs),
    /// Convex obstacle polygons from a depth image or point cloud.
    ObstacleMap(ObstacleArgs),
    /// Render ground-truth depth of a synthetic scene for both cameras.
    Synth(SynthArgs),
    /// Percentile-stretch a raw 16-bit thermal PGM.
    NormalizeThermal(NormalizeArgs),
}

#[derive(Args)]
struct WarpArgs {
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long)]
    depth: Option<PathBuf>,
    #[arg(long)]
    rgb_depth: Option<PathBuf>,
    #[arg(long, value_enum)]
    direction: Option<Direction>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    bin_width: Option<f64>,
    #[arg(long)]
    max_depth: Option<f64>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Relative error tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    /// Perturb one analytic gradient to exercise the failure path.
    #[arg(long, hide = true, value_parser = parse_serde::<CheckTarget>)]
    inject_fault: Option<CheckTarget>,
}

#[derive(Args)]
struct DistillArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    /// oracle, fitted or uniform.
    #[arg(long, value_parser = parse_serde::<ConfidenceMode>)]
    confidence_mode: Option<ConfidenceMode>,
    #[arg(long)]
    dump: bool,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    lidar: Option<PathBuf>,
    #[arg(long)]
    left: Option<PathBuf>,
    #[arg(long)]
    right: Option<PathBuf>,
    #[arg(long)]
    rig: Option<PathBuf>,
    #[arg(long)]
    stereo: Option<PathBuf>,
    #[arg(long)]
    tau_photo: Option<f64>,
    #[arg(long)]
    tau_rel: Option<f64>,
}

#[derive(Args)]
struct ObstacleArgs {
    #[arg(long)]
    depth: Option<PathBuf>,
    #[arg(long)]
    camera: Option<PathBuf>,
    #[arg(long)]
    points: Option<PathBuf>,
    #[arg(long)]
    voxel: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    min_pts: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    random: bool,
}

#[derive(Args)]
struct NormalizeArgs {
    #[arg(long)]
    input: Option<PathBuf>,
}

fn parse_serde<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        CliError::Usage(format!(
            "{THREADS_ENV} must be a non-negative integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let mut file = ConfigFile::load(cli.config.as_deref())?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Warp(a) => {
            let c = &mut file.warp;
            set_opt(&mut c.calib, a.calib);
            set_opt(&mut c.depth, a.depth);
            set_opt(&mut c.rgb_depth, a.rgb_depth);
            set(&mut c.direction, a.direction);
            commands::echo_config(out, "warp", c)?;
            commands::warp(c, out)
        }
        Command::Eval(a) => {
            let c = &mut file.eval;
            set_opt(&mut c.pred, a.pred);
            set_opt(&mut c.gt, a.gt);
            set_opt(&mut c.mask, a.mask);
            set(&mut c.split, a.split);
            set(&mut c.method, a.method);
            set(&mut c.bin_width, a.bin_width);
            set(&mut c.max_depth, a.max_depth);
            commands::echo_config(out, "eval", c)?;
            commands::eval(c, out)
        }
        Command::Gradcheck(a) => {
            let c = &mut file.gradcheck;
            set(&mut c.seed, a.seed);
            set(&mut c.rel_tol, a.tolerance);
            set(&mut c.instances, a.instances);
            set(&mut c.size, a.size);
            set_opt(&mut c.inject_fault, a.inject_fault);
            commands::echo_config(out, "gradcheck", c)?;
            commands::gradcheck(c, out)
        }
        Command::DistillDemo(a) => {
            let c = &mut file.distill_demo;
            set(&mut c.run.seed, a.seed);
            set(&mut c.run.steps, a.steps);
            set(&mut c.run.confidence_mode, a.confidence_mode);
            c.dump |= a.dump;
            commands::echo_config(out, "distill_demo", c)?;
            commands::distill_demo(c, out)
        }
        Command::FilterLidar(a) => {
            let c = &mut file.filter_lidar;
            set_opt(&mut c.lidar, a.lidar);
            set_opt(&mut c.left, a.left);
            set_opt(&mut c.right, a.right);
            set_opt(&mut c.rig, a.rig);
            set_opt(&mut c.stereo, a.stereo);
            set(&mut c.tau_photo, a.tau_photo);
            set(&mut c.tau_rel, a.tau_rel);
            commands::echo_config(out, "filter_lidar", c)?;
            commands::filter(c, out)
        }
        Command::ObstacleMap(a) => {
            let c = &mut file.obstacle_map;
            set_opt(&mut c.depth, a.depth);
            set_opt(&mut c.camera, a.camera);
            set_opt(&mut c.points, a.points);
            set(&mut c.params.voxel, a.voxel);
            set(&mut c.params.eps, a.eps);
            set(&mut c.params.min_pts, a.min_pts);
            set(&mut c.params.alpha, a.alpha);
            commands::echo_config(out, "obstacle_map", c)?;
            commands::obstacle_map(c, out)
        }
        Command::Synth(a) => {
            let c = &mut file.synth;
            set(&mut c.seed, a.seed);
            c.random |= a.random;
            commands::echo_config(out, "synth", c)?;
            commands::synth(c, out)
        }
        Command::NormalizeThermal(a) => {
            let c = &mut file.normalize_thermal;
            set_opt(&mut c.input, a.input);
            commands::echo_config(out, "normalize_thermal", c)?;
            commands::normalize(c, out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
