//! JSON run configuration. Each subcommand reads its own section; unknown
//! keys anywhere are rejected.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use xmodal_core::depthfilter::{DEFAULT_TAU_PHOTO, DEFAULT_TAU_REL};
use xmodal_core::geometry::{CameraIntrinsics, CameraRig, RigidTransform};
use xmodal_core::gradcheck::SuiteConfig;
use xmodal_core::metrics::{DEFAULT_BIN_WIDTH, DEFAULT_MAX_DEPTH};
use xmodal_core::obstaclemap::ObstacleConfig;
use xmodal_core::synthscene::{default_rig, DistillConfig, Scene};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub warp: WarpConfig,
    pub eval: EvalConfig,
    pub gradcheck: SuiteConfig,
    pub distill_demo: DistillDemoConfig,
    pub filter_lidar: FilterLidarConfig,
    pub obstacle_map: ObstacleMapConfig,
    pub synth: SynthConfig,
    pub normalize_thermal: NormalizeThermalConfig,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> xmodal_core::Result<Self> {
        match path {
            Some(p) => xmodal_core::io::read_json(p),
            None => Ok(Self::default()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// RGB depth into the thermal camera: transformed depth and thermal coordinates.
    #[default]
    RgbToThermal,
    /// Thermal depth resampled onto the RGB grid; needs the RGB depth for the coordinates.
    ThermalToRgb,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarpConfig {
    pub calib: Option<PathBuf>,
    pub depth: Option<PathBuf>,
    /// RGB depth used to place RGB pixels in the thermal image.
    pub rgb_depth: Option<PathBuf>,
    pub direction: Direction,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub pred: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    /// Optional PGM; non-zero pixels are evaluated.
    pub mask: Option<PathBuf>,
    pub split: String,
    pub method: String,
    pub bin_width: f64,
    pub max_depth: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pred: None,
            gt: None,
            mask: None,
            split: "test".into(),
            method: "model".into(),
            bin_width: DEFAULT_BIN_WIDTH,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillDemoConfig {
    pub run: DistillConfig,
    /// Write intermediate depths (PFM) and a confidence/error heat map (PPM).
    pub dump: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterLidarConfig {
    pub lidar: Option<PathBuf>,
    /// Left/right intensity images, PGM or single-channel PFM.
    pub left: Option<PathBuf>,
    pub right: Option<PathBuf>,
    /// Stereo rig JSON; required with the photometric check.
    pub rig: Option<PathBuf>,
    pub stereo: Option<PathBuf>,
    pub tau_photo: f64,
    pub tau_rel: f64,
}

impl Default for FilterLidarConfig {
    fn default() -> Self {
        Self {
            lidar: None,
            left: None,
            right: None,
            rig: None,
            stereo: None,
            tau_photo: DEFAULT_TAU_PHOTO,
            tau_rel: DEFAULT_TAU_REL,
        }
    }
}

/// Camera description for back-projecting a depth image into the world.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthCamera {
    pub intrinsics: CameraIntrinsics,
    #[serde(rename = "T_world_camera")]
    pub pose: RigidTransform,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObstacleMapConfig {
    pub depth: Option<PathBuf>,
    pub camera: Option<PathBuf>,
    /// `x y z` text point cloud, used instead of depth + camera.
    pub points: Option<PathBuf>,
    pub params: ObstacleConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// Draw a random scene from `seed` instead of using `scene`.
    pub random: bool,
    pub scene: Scene,
    pub rig: CameraRig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            random: false,
            scene: Scene::default_room(),
            rig: default_rig(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizeThermalConfig {
    pub input: Option<PathBuf>,
}
