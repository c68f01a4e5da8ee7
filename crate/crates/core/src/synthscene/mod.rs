//! Analytic scenes made of spheres and bounded axis-aligned planes in front
//! of a background plane, rendered by closed-form ray casting.
//!
//! The world frame is the RGB camera frame (x right, y down, z forward). A
//! camera pose is `T_world_cam`.

mod confidence;
mod corruption;
mod demo;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, RigidTransform, MIN_DEPTH};
use crate::grid::{DepthMap, Grid};

pub use confidence::{
    fit_confidence, oracle_confidence, ConfidenceMode, ConfidenceProvider, FitOptions, FitResult,
    FittedConfidence, OracleConfidence, UniformConfidence,
};
pub use corruption::{corrupt_depth, CorruptionConfig, Rect};
pub use demo::{
    default_rig, run_distillation_demo, DemoArtifacts, DistillConfig, DistillReport, RunSummary,
};

/// Relative tolerance on the segment parameter used by [`Scene::is_visible`].
const SEGMENT_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    /// The two remaining axes, in increasing order.
    fn others(self) -> [usize; 2] {
        match self {
            Axis::X => [1, 2],
            Axis::Y => [0, 2],
            Axis::Z => [0, 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// The plane `coord[axis] = offset`, restricted to the closed box
    /// `min ≤ (other coords) ≤ max` over the two remaining axes in x, y, z order.
    Plane {
        axis: Axis,
        offset: f64,
        min: [f64; 2],
        max: [f64; 2],
    },
}

impl Primitive {
    fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Primitive::Sphere { center, radius } => {
                if !finite(center) || !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::Config(format!(
                        "invalid sphere (center {center:?}, radius {radius})"
                    )));
                }
            }
            Primitive::Plane {
                offset, min, max, ..
            } => {
                if !offset.is_finite()
                    || !finite(min)
                    || !finite(max)
                    || min[0] > max[0]
                    || min[1] > max[1]
                {
                    return Err(Error::Config(format!(
                        "invalid plane bounds {min:?}..{max:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Smallest ray parameter `s > s_min` with `origin + s·dir` on the primitive.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, s_min: f64) -> Option<f64> {
        match self {
            Primitive::Sphere { center, radius } => {
                let oc = origin - Vector3::from(*center);
                let a = dir.dot(dir);
                let b = oc.dot(dir);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                // Numerically stable pair of roots.
                let q = -(b + b.signum() * disc.sqrt());
                let (r1, r2) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
                let (near, far) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
                [near, far].into_iter().find(|&s| s > s_min)
            }
            Primitive::Plane {
                axis,
                offset,
                min,
                max,
            } => {
                let k = axis.index();
                if dir[k] == 0.0 {
                    return None;
                }
                let s = (offset - origin[k]) / dir[k];
                if !(s > s_min) {
                    return None;
                }
                let p = origin + dir * s;
                let [i, j] = axis.others();
                (p[i] >= min[0] && p[i] <= max[0] && p[j] >= min[1] && p[j] <= max[1]).then_some(s)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    /// Depth of the infinite background plane `z = background_depth`.
    pub background_depth: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Scene {
    /// Floor, side wall and a sphere in front of a background plane at 9 m.
    pub fn default_room() -> Self {
        Self {
            primitives: vec![
                Primitive::Plane {
                    axis: Axis::Y,
                    offset: 1.2,
                    min: [-6.0, 0.5],
                    max: [1.8, 9.0],
                },
                Primitive::Plane {
                    axis: Axis::X,
                    offset: 1.8,
                    min: [-3.0, 2.0],
                    max: [1.2, 9.0],
                },
                Primitive::Sphere {
                    center: [-0.4, 0.2, 4.5],
                    radius: 0.8,
                },
            ],
            background_depth: 9.0,
            seed: 0,
        }
    }

    /// A random arrangement of spheres and fronto-parallel panels, fully
    /// determined by `seed`.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let background_depth = rng.random_range(7.0..12.0);
        let mut primitives = Vec::new();
        for _ in 0..rng.random_range(1..=3) {
            let z = rng.random_range(2.5..6.0);
            primitives.push(Primitive::Sphere {
                center: [
                    rng.random_range(-0.4..0.4) * z,
                    rng.random_range(-0.3..0.3) * z,
                    z,
                ],
                radius: rng.random_range(0.3..1.0),
            });
        }
        for _ in 0..rng.random_range(0..=2) {
            let z = rng.random_range(3.0..7.0);
            let (x0, y0) = (
                rng.random_range(-0.5..0.2) * z,
                rng.random_range(-0.4..0.1) * z,
            );
            primitives.push(Primitive::Plane {
                axis: Axis::Z,
                offset: z,
                min: [x0, y0],
                max: [
                    x0 + rng.random_range(0.5..2.5),
                    y0 + rng.random_range(0.5..2.0),
                ],
            });
        }
        primitives.push(Primitive::Plane {
            axis: Axis::Y,
            offset: rng.random_range(1.0..1.6),
            min: [-20.0, 0.5],
            max: [20.0, background_depth],
        });
        Self {
            primitives,
            background_depth,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.background_depth > 0.0 && self.background_depth.is_finite()) {
            return Err(Error::Config(format!(
                "background depth must be positive, got {}",
                self.background_depth
            )));
        }
        self.primitives.iter().try_for_each(Primitive::validate)
    }

    /// Checks that every pixel ray of the camera reaches the background plane.
    pub fn validate_camera(&self, k: &CameraIntrinsics, pose: &RigidTransform) -> Result<()> {
        self.validate()?;
        let o = pose.translation();
        if o.z >= self.background_depth {
            return Err(Error::Config(
                "camera sits behind the background plane".into(),
            ));
        }
        let (w, h) = (k.width as f64 - 1.0, k.height as f64 - 1.0);
        for (u, v) in [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)] {
            if (pose.rotation() * k.ray(u, v)).z <= 0.0 {
                return Err(Error::Config(
                    "a camera ray never reaches the background plane".into(),
                ));
            }
        }
        Ok(())
    }

    /// Nearest hit along `origin + s·dir` with `s > s_min`, background included.
    fn first_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, s_min: f64) -> Option<f64> {
        let bg = (dir.z > 0.0)
            .then(|| (self.background_depth - origin.z) / dir.z)
            .filter(|&s| s > s_min);
        self.primitives
            .iter()
            .filter_map(|p| p.intersect(origin, dir, s_min))
            .chain(bg)
            .min_by(f64::total_cmp)
    }

    /// Depth seen through the (sub-)pixel `(u, v)`.
    pub fn cast_depth(
        &self,
        k: &CameraIntrinsics,
        pose: &RigidTransform,
        u: f64,
        v: f64,
    ) -> Option<f64> {
        // The camera-frame ray has z = 1, so its parameter equals the depth.
        let dir = pose.rotation() * k.ray(u, v);
        self.first_hit(pose.translation(), &dir, MIN_DEPTH)
    }

    /// True when the segment from `eye` to `point` crosses no surface before
    /// reaching `point`.
    pub fn is_visible(&self, eye: &Vector3<f64>, point: &Vector3<f64>) -> bool {
        let dir = point - eye;
        match self.first_hit(eye, &dir, SEGMENT_EPS) {
            Some(s) => s >= 1.0 - SEGMENT_EPS,
            None => true,
        }
    }
}

/// Per-pixel depth of `scene` seen by camera `k` at `pose` (`T_world_cam`).
pub fn render_depth(
    scene: &Scene,
    k: &CameraIntrinsics,
    pose: &RigidTransform,
) -> Result<DepthMap> {
    scene.validate_camera(k, pose)?;
    let (w, h) = k.dims();
    let values: Vec<f64> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            scene
                .cast_depth(k, pose, (i % w) as f64, (i / w) as f64)
                .unwrap_or(f64::NAN)
        })
        .collect();
    Ok(DepthMap::from_values(Grid::from_vec(w, h, values)?))
}
