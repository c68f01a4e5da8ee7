//! LiDAR ground-truth cleanup: photometric left/right agreement and deviation
//! from a stereo depth map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{warp_depth, BilinearTaps, CameraIntrinsics, RigidTransform};
use crate::grid::{DepthMap, Grid, Mask};

pub const DEFAULT_TAU_PHOTO: f64 = 0.2;
pub const DEFAULT_TAU_REL: f64 = 0.1;

/// Left/right camera pair; the LiDAR depth lives on the left grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StereoRig {
    pub left: CameraIntrinsics,
    pub right: CameraIntrinsics,
    /// Maps left-frame points into the right frame.
    #[serde(rename = "T_right_left")]
    pub t_right_left: RigidTransform,
}

impl StereoRig {
    pub fn validate(&self) -> Result<()> {
        self.left.validate()?;
        self.right.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutcome {
    pub depth: DepthMap,
    /// Pixels valid on input and invalid on output.
    pub removed: usize,
}

fn outcome(input: &DepthMap, keep: Mask) -> FilterOutcome {
    let depth = input.restrict(&keep);
    FilterOutcome {
        removed: input.num_valid() - depth.num_valid(),
        depth,
    }
}

/// Removes LiDAR pixels whose left intensity disagrees with the right image
/// sampled at their reprojection by more than `tau_photo`, or whose
/// reprojection leaves the right image.
pub fn photometric_filter(
    lidar: &DepthMap,
    left: &Grid<f64>,
    right: &Grid<f64>,
    rig: &StereoRig,
    tau_photo: f64,
) -> Result<FilterOutcome> {
    if tau_photo.is_nan() || tau_photo < 0.0 {
        return Err(Error::Config(format!(
            "tau_photo must be >= 0, got {tau_photo}"
        )));
    }
    if left.dims() != rig.left.dims() || lidar.dims() != rig.left.dims() {
        return Err(Error::ShapeMismatch(
            "LiDAR depth and left image must match the left camera".into(),
        ));
    }
    if right.dims() != rig.right.dims() {
        return Err(Error::ShapeMismatch(
            "right image must match the right camera".into(),
        ));
    }
    let warped = warp_depth(lidar, &rig.left, &rig.right, &rig.t_right_left)?;
    let (rw, rh) = right.dims();
    let all_valid = vec![true; right.len()];
    let keep = Grid::from_fn(lidar.width(), lidar.height(), |x, y| {
        let Some((u, v)) = warped.coords.coord(x, y) else {
            return false;
        };
        BilinearTaps::new(u, v, rw, rh)
            .and_then(|t| t.sample(right.data(), &all_valid))
            .is_some_and(|ir| (left.get(x, y) - ir).abs() <= tau_photo)
    });
    Ok(outcome(lidar, keep.and(lidar.valid())))
}

/// Removes LiDAR pixels whose relative deviation `|lidar − stereo| / lidar`
/// exceeds `tau_rel`. Pixels without a stereo depth are kept.
pub fn stereo_deviation_filter(
    lidar: &DepthMap,
    stereo: &DepthMap,
    tau_rel: f64,
) -> Result<FilterOutcome> {
    if tau_rel.is_nan() || tau_rel < 0.0 {
        return Err(Error::Config(format!(
            "tau_rel must be >= 0, got {tau_rel}"
        )));
    }
    lidar
        .values()
        .ensure_same_shape(stereo.values(), "LiDAR vs stereo depth")?;
    let keep = Grid::from_fn(lidar.width(), lidar.height(), |x, y| {
        match (lidar.depth(x, y), stereo.depth(x, y)) {
            (Some(l), Some(s)) => (l - s).abs() / l <= tau_rel,
            (Some(_), None) => true,
            (None, _) => false,
        }
    });
    Ok(outcome(lidar, keep))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub removed_photometric: usize,
    /// Additional pixels removed by the stereo check after the photometric one.
    pub removed_stereo: usize,
    pub kept: usize,
}

pub struct PhotometricInputs<'a> {
    pub left: &'a Grid<f64>,
    pub right: &'a Grid<f64>,
    pub rig: &'a StereoRig,
    pub tau_photo: f64,
}

/// Applies whichever filters have inputs, photometric first.
pub fn filter_lidar(
    lidar: &DepthMap,
    photometric: Option<&PhotometricInputs<'_>>,
    stereo: Option<(&DepthMap, f64)>,
) -> Result<(DepthMap, FilterSummary)> {
    let mut depth = lidar.clone();
    let mut summary = FilterSummary {
        removed_photometric: 0,
        removed_stereo: 0,
        kept: 0,
    };
    if let Some(p) = photometric {
        let out = photometric_filter(&depth, p.left, p.right, p.rig, p.tau_photo)?;
        summary.removed_photometric = out.removed;
        depth = out.depth;
    }
    if let Some((s, tau)) = stereo {
        let out = stereo_deviation_filter(&depth, s, tau)?;
        summary.removed_stereo = out.removed;
        depth = out.depth;
    }
    summary.kept = depth.num_valid();
    Ok((depth, summary))
}
