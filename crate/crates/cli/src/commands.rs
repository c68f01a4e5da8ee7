use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;
use xmodal_core::depthfilter::{filter_lidar, PhotometricInputs, StereoRig};
use xmodal_core::geometry::{warp_depth, warped_thermal_depth, RigidTransform};
use xmodal_core::gradcheck::{run_suite, SuiteConfig};
use xmodal_core::imagery::normalize_thermal;
use xmodal_core::io::{
    decode_pfm, encode_pfm, read_calibration, read_json, read_pfm, read_pgm, read_xyz,
    write_calibration, write_json, write_pfm, write_ppm,
};
use xmodal_core::metrics::{
    compute_metrics, compute_weighted_metrics, write_metrics_csv, BinnedMetricSet, MetricSet,
    MetricsRow,
};
use xmodal_core::obstaclemap::{build_obstacle_map, depth_to_pointcloud, PointCloud};
use xmodal_core::synthscene::{render_depth, run_distillation_demo, DemoArtifacts, Scene};
use xmodal_core::{DepthMap, Grid, Image3};

use crate::config::{
    DepthCamera, Direction, DistillDemoConfig, EvalConfig, FilterLidarConfig,
    NormalizeThermalConfig, ObstacleMapConfig, SynthConfig, WarpConfig,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] xmodal_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_input_error() => 2,
            CliError::Core(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing required input: {what}")))
}

/// Writes the resolved section as `{"<name>": section}` into `out/config.json`.
pub fn echo_config<T: Serialize>(out: &Path, name: &str, section: &T) -> CliResult<()> {
    fs::create_dir_all(out)?;
    let mut map = serde_json::Map::new();
    map.insert(
        name.to_string(),
        serde_json::to_value(section).map_err(xmodal_core::Error::from)?,
    );
    write_json(out.join("config.json"), &map)?;
    Ok(())
}

pub fn warp(cfg: &WarpConfig, out: &Path) -> CliResult<()> {
    let rig = read_calibration(required(&cfg.calib, "calib")?)?;
    let depth = read_pfm(required(&cfg.depth, "depth")?)?;
    match cfg.direction {
        Direction::RgbToThermal => {
            let w = warp_depth(&depth, &rig.rgb, &rig.thermal, &rig.t_thermal_rgb)?;
            write_pfm(out.join("depth_rt.pfm"), &w.depth)?;
            // Invalid coordinates are already NaN.
            fs::write(out.join("u_rt_x.pfm"), encode_pfm(&w.coords.x))?;
            fs::write(out.join("u_rt_y.pfm"), encode_pfm(&w.coords.y))?;
            println!(
                "warped {} of {} valid pixels into the thermal camera",
                w.depth.num_valid(),
                depth.num_valid()
            );
        }
        Direction::ThermalToRgb => {
            let rgb_depth = read_pfm(required(&cfg.rgb_depth, "rgb_depth")?)?;
            let u_rt = warp_depth(&rgb_depth, &rig.rgb, &rig.thermal, &rig.t_thermal_rgb)?.coords;
            let d =
                warped_thermal_depth(&depth, &u_rt, &rig.thermal, &rig.rgb, &rig.t_rgb_thermal())?;
            write_pfm(out.join("depth_tr_warped.pfm"), &d)?;
            println!("resampled thermal depth onto {} RGB pixels", d.num_valid());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    standard: MetricSet,
    weighted: BinnedMetricSet,
}

pub fn eval(cfg: &EvalConfig, out: &Path) -> CliResult<()> {
    let pred = read_pfm(required(&cfg.pred, "pred")?)?;
    let gt = read_pfm(required(&cfg.gt, "gt")?)?;
    let mask = match &cfg.mask {
        Some(p) => Some(read_pgm(p)?.pixels.map(|&v| v != 0)),
        None => None,
    };
    let standard = compute_metrics(&pred, &gt, mask.as_ref())?;
    let weighted =
        compute_weighted_metrics(&pred, &gt, mask.as_ref(), cfg.bin_width, cfg.max_depth)?;
    let row = |variant: &str, metrics: MetricSet| MetricsRow {
        split: cfg.split.clone(),
        method: cfg.method.clone(),
        variant: variant.into(),
        metrics,
    };
    let rows = [
        row("standard", standard),
        row("weighted", weighted.aggregate),
    ];
    write_metrics_csv(fs::File::create(out.join("metrics.csv"))?, &rows)?;
    write_metrics_csv(std::io::stdout().lock(), &rows)?;
    write_json(out.join("metrics.json"), &EvalReport { standard, weighted })?;
    Ok(())
}

pub fn gradcheck(cfg: &SuiteConfig, out: &Path) -> CliResult<()> {
    let report = run_suite(cfg)?;
    write_json(out.join("report.json"), &report)?;
    for c in &report.checks {
        println!(
            "{:<28} max_rel_error {:.3e}  checked {:>6}  kinks {:>5}  {}",
            c.input,
            c.max_rel_error,
            c.num_checked,
            c.num_skipped_kinks,
            if c.passed { "ok" } else { "FAILED" }
        );
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "gradient check exceeded rel_tol {}",
            cfg.rel_tol
        )))
    }
}

/// Side-by-side heat map: confidence on the left, teacher error on the right
/// (scaled to its maximum), both on a blue-to-red ramp.
fn confidence_error_heatmap(a: &DemoArtifacts) -> Image3 {
    let (w, h) = a.teacher.dims();
    let err = Grid::from_fn(w, h, |x, y| {
        match (a.teacher.depth(x, y), a.gt_rgb.depth(x, y)) {
            (Some(t), Some(g)) => (t - g).abs(),
            _ => 0.0,
        }
    });
    let max_err = err
        .iter()
        .copied()
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let ramp = |v: f64| [v, 0.2 * (1.0 - (2.0 * v - 1.0).abs()), 1.0 - v];
    Grid::from_fn(2 * w, h, |x, y| {
        if x < w {
            ramp(*a.confidence.get(x, y))
        } else {
            ramp(err.get(x - w, y) / max_err)
        }
    })
}

pub fn distill_demo(cfg: &DistillDemoConfig, out: &Path) -> CliResult<()> {
    let (report, artifacts) = run_distillation_demo(&cfg.run)?;
    write_json(out.join("report.json"), &report)?;
    if cfg.dump {
        let dir = out.join("dumps");
        fs::create_dir_all(&dir)?;
        let maps = [
            ("gt_rgb", &artifacts.gt_rgb),
            ("gt_thermal", &artifacts.gt_thermal),
            ("teacher", &artifacts.teacher),
            ("student_init", &artifacts.student_init),
            ("student_confident", &artifacts.student_confident),
            ("student_uniform", &artifacts.student_uniform),
        ];
        for (name, map) in maps {
            write_pfm(dir.join(format!("{name}.pfm")), map)?;
        }
        write_pfm(
            dir.join("confidence.pfm"),
            &DepthMap::from_values(artifacts.confidence.clone()),
        )?;
        write_ppm(
            dir.join("confidence_vs_error.ppm"),
            &confidence_error_heatmap(&artifacts),
        )?;
    }
    println!("absrel_init       {:.6}", report.absrel_init);
    println!("absrel_confident  {:.6}", report.absrel_confident);
    println!("absrel_uniform    {:.6}", report.absrel_uniform);
    println!("improvement_pct   {:.2}", report.improvement_pct);
    println!("ssft_improvement  {:.2}", report.ssft_improvement_pct);
    Ok(())
}

fn read_intensity(path: &Path) -> CliResult<Grid<f64>> {
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    Ok(if is_pgm {
        read_pgm(path)?.normalized()
    } else {
        decode_pfm(&fs::read(path)?)?
    })
}

pub fn filter(cfg: &FilterLidarConfig, out: &Path) -> CliResult<()> {
    let lidar = read_pfm(required(&cfg.lidar, "lidar")?)?;
    let photo_inputs = match (&cfg.left, &cfg.right) {
        (Some(l), Some(r)) => {
            let rig: StereoRig = read_json(required(&cfg.rig, "rig")?)?;
            rig.validate()?;
            Some((read_intensity(l)?, read_intensity(r)?, rig))
        }
        (None, None) => None,
        _ => {
            return Err(CliError::Usage(
                "the photometric check needs both left and right images".into(),
            ))
        }
    };
    let photometric = photo_inputs
        .as_ref()
        .map(|(left, right, rig)| PhotometricInputs {
            left,
            right,
            rig,
            tau_photo: cfg.tau_photo,
        });
    let stereo = cfg.stereo.as_ref().map(read_pfm).transpose()?;
    let (filtered, summary) = filter_lidar(
        &lidar,
        photometric.as_ref(),
        stereo.as_ref().map(|s| (s, cfg.tau_rel)),
    )?;
    write_pfm(out.join("filtered.pfm"), &filtered)?;
    write_json(out.join("summary.json"), &summary)?;
    println!(
        "kept {} pixels; removed {} photometric, {} stereo",
        summary.kept, summary.removed_photometric, summary.removed_stereo
    );
    Ok(())
}

pub fn obstacle_map(cfg: &ObstacleMapConfig, out: &Path) -> CliResult<()> {
    let cloud = match (&cfg.points, &cfg.depth) {
        (Some(p), None) => PointCloud::from_points(read_xyz(fs::File::open(p)?)?)?,
        (None, Some(d)) => {
            let camera: DepthCamera = read_json(required(&cfg.camera, "camera")?)?;
            depth_to_pointcloud(&read_pfm(d)?, &camera.intrinsics, &camera.pose)?
        }
        _ => {
            return Err(CliError::Usage(
                "give exactly one of points or depth".into(),
            ))
        }
    };
    let run = build_obstacle_map(&cloud, &cfg.params)?;
    write_json(out.join("obstacles.json"), &run.map)?;
    println!(
        "{} points -> {} voxels -> {} inliers -> {} above ground -> {} polygons",
        run.num_input,
        run.num_downsampled,
        run.num_inliers,
        run.flat.len(),
        run.map.polygons.len()
    );
    Ok(())
}

pub fn synth(cfg: &SynthConfig, out: &Path) -> CliResult<()> {
    cfg.rig.validate()?;
    let scene = if cfg.random {
        Scene::random(cfg.seed)
    } else {
        cfg.scene.clone()
    };
    let rgb = render_depth(&scene, &cfg.rig.rgb, &RigidTransform::identity())?;
    let thermal = render_depth(&scene, &cfg.rig.thermal, &cfg.rig.t_rgb_thermal())?;
    write_pfm(out.join("rgb_depth.pfm"), &rgb)?;
    write_pfm(out.join("thermal_depth.pfm"), &thermal)?;
    write_calibration(out.join("calib.json"), &cfg.rig)?;
    write_json(out.join("scene.json"), &scene)?;
    println!(
        "rendered {} RGB and {} thermal pixels",
        rgb.num_valid(),
        thermal.num_valid()
    );
    Ok(())
}

#[derive(Serialize)]
struct NormalizeStats {
    p2: f64,
    p98: f64,
    degenerate: bool,
}

pub fn normalize(cfg: &NormalizeThermalConfig, out: &Path) -> CliResult<()> {
    let raw = read_pgm(required(&cfg.input, "input")?)?;
    let n = normalize_thermal(&raw.pixels)?;
    fs::write(out.join("normalized.pfm"), encode_pfm(&n.image))?;
    write_json(
        out.join("stats.json"),
        &NormalizeStats {
            p2: n.p2,
            p98: n.p98,
            degenerate: n.degenerate,
        },
    )?;
    println!(
        "p2 {} p98 {}{}",
        n.p2,
        n.p98,
        if n.degenerate { " (degenerate)" } else { "" }
    );
    Ok(())
}
