//! Depth image to 2-D convex obstacle polygons: back-projection, voxel
//! downsampling, radial outlier rejection, ground removal, DBSCAN and one
//! convex polygon per cluster.
//!
//! World coordinates are z-up with the ground at `z = 0`; the pose passed to
//! [`depth_to_pointcloud`] maps camera coordinates into that frame.

mod dbscan;
mod polygon;

pub use dbscan::{dbscan, neighborhoods, NOISE};
pub use polygon::{cluster_to_polygon, contains, convex_hull, is_convex_ccw, ObstacleMap, Polygon};

use indexmap::IndexMap;
use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{backproject, CameraIntrinsics, RigidTransform};
use crate::grid::DepthMap;

pub const DEFAULT_VOXEL: f64 = 0.1;
pub const DEFAULT_GROUND_HEIGHT: f64 = 0.15;
pub const DEFAULT_MAX_HEIGHT: f64 = 2.0;
pub const DEFAULT_EPS: f64 = 0.5;
pub const DEFAULT_MIN_PTS: usize = 5;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    /// Source pixel `(x, y)` of each point, if it came from a depth image.
    /// Downsampled points keep the pixel of the first point in their voxel.
    pub provenance: Vec<Option<(usize, usize)>>,
}

impl PointCloud {
    /// Cloud without pixel provenance. Rejects non-finite coordinates.
    pub fn from_points(points: Vec<Vector3<f64>>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Domain(format!(
                "non-finite point {:?}",
                p.as_slice()
            )));
        }
        let provenance = vec![None; points.len()];
        Ok(Self { points, provenance })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn select(&self, keep: &[bool]) -> Self {
        let mut out = Self::default();
        for ((p, src), &k) in self.points.iter().zip(&self.provenance).zip(keep) {
            if k {
                out.points.push(*p);
                out.provenance.push(*src);
            }
        }
        out
    }
}

/// Pose of a camera looking horizontally along world `+x`, mounted `height`
/// meters above the ground (camera x right, y down, z forward).
pub fn forward_camera_pose(height: f64) -> RigidTransform {
    let rotation = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    RigidTransform::new(rotation, Vector3::new(0.0, 0.0, height))
        .expect("axis permutation is a rotation")
}

/// Back-projects every valid pixel and maps it into the world frame. An
/// all-invalid map gives an empty cloud.
pub fn depth_to_pointcloud(
    depth: &DepthMap,
    k: &CameraIntrinsics,
    pose: &RigidTransform,
) -> Result<PointCloud> {
    k.validate()?;
    if depth.dims() != k.dims() {
        return Err(Error::ShapeMismatch(format!(
            "depth is {}x{} but intrinsics are {}x{}",
            depth.width(),
            depth.height(),
            k.width,
            k.height
        )));
    }
    let mut cloud = PointCloud::default();
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            if let Some(d) = depth.depth(x, y) {
                let p = backproject(&Vector2::new(x as f64, y as f64), d, k)?;
                cloud.points.push(pose.transform_point(&p));
                cloud.provenance.push(Some((x, y)));
            }
        }
    }
    Ok(cloud)
}

fn voxel_key(p: &Vector3<f64>, voxel: f64) -> VoxelKey {
    (
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    )
}

type VoxelKey = (i64, i64, i64);
/// Running sum, count and first provenance of the points in one voxel.
type VoxelAccum = (Vector3<f64>, usize, Option<(usize, usize)>);

/// Replaces the points of each occupied voxel by their centroid. Voxels are
/// emitted in order of first occurrence.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(Error::Config(format!(
            "voxel size must be positive, got {voxel}"
        )));
    }
    let mut cells: IndexMap<VoxelKey, VoxelAccum> = IndexMap::new();
    for (p, src) in cloud.points.iter().zip(&cloud.provenance) {
        let cell = cells
            .entry(voxel_key(p, voxel))
            .or_insert((Vector3::zeros(), 0, *src));
        cell.0 += p;
        cell.1 += 1;
    }
    let (points, provenance) = cells
        .into_values()
        .map(|(sum, n, src)| (sum / n as f64, src))
        .unzip();
    Ok(PointCloud { points, provenance })
}

/// Keeps points with at least `min_neighbors` other points within `radius`.
pub fn radial_outlier_filter(
    cloud: &PointCloud,
    radius: f64,
    min_neighbors: usize,
) -> Result<PointCloud> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!(
            "outlier radius must be positive, got {radius}"
        )));
    }
    if min_neighbors == 0 {
        return Ok(cloud.clone());
    }
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        grid.entry(voxel_key(p, radius)).or_default().push(i);
    }
    let r2 = radius * radius;
    let keep: Vec<bool> = cloud
        .points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let (cx, cy, cz) = voxel_key(p, radius);
            let mut count = 0;
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let Some(cell) = grid.get(&(cx + dx, cy + dy, cz + dz)) else {
                            continue;
                        };
                        count += cell
                            .iter()
                            .filter(|&&j| j != i && (cloud.points[j] - p).norm_squared() <= r2)
                            .count();
                        if count >= min_neighbors {
                            return true;
                        }
                    }
                }
            }
            false
        })
        .collect();
    Ok(cloud.select(&keep))
}

/// Drops points with height `≤ ground_height` or `> max_height` and projects
/// the rest onto the ground plane.
pub fn remove_ground_and_flatten(
    cloud: &PointCloud,
    ground_height: f64,
    max_height: f64,
) -> Result<Vec<Vector2<f64>>> {
    if !(max_height > ground_height) {
        return Err(Error::Config(format!(
            "max_height ({max_height}) must exceed ground_height ({ground_height})"
        )));
    }
    Ok(cloud
        .points
        .iter()
        .filter(|p| p.z > ground_height && p.z <= max_height)
        .map(|p| p.xy())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObstacleConfig {
    pub voxel: f64,
    pub outlier_radius: f64,
    pub outlier_min_neighbors: usize,
    pub ground_height: f64,
    pub max_height: f64,
    pub eps: f64,
    pub min_pts: usize,
    pub alpha: f64,
    pub padding: f64,
}

impl Default for ObstacleConfig {
    fn default() -> Self {
        Self {
            voxel: DEFAULT_VOXEL,
            outlier_radius: 0.3,
            outlier_min_neighbors: 3,
            ground_height: DEFAULT_GROUND_HEIGHT,
            max_height: DEFAULT_MAX_HEIGHT,
            eps: DEFAULT_EPS,
            min_pts: DEFAULT_MIN_PTS,
            alpha: 0.0,
            padding: 0.05,
        }
    }
}

/// Intermediate results of [`build_obstacle_map`].
#[derive(Clone, Debug, PartialEq)]
pub struct ObstacleRun {
    pub map: ObstacleMap,
    pub num_input: usize,
    pub num_downsampled: usize,
    pub num_inliers: usize,
    pub flat: Vec<Vector2<f64>>,
    pub labels: Vec<i64>,
}

pub fn build_obstacle_map(cloud: &PointCloud, config: &ObstacleConfig) -> Result<ObstacleRun> {
    let down = voxel_downsample(cloud, config.voxel)?;
    let inliers =
        radial_outlier_filter(&down, config.outlier_radius, config.outlier_min_neighbors)?;
    let flat = remove_ground_and_flatten(&inliers, config.ground_height, config.max_height)?;
    let labels = dbscan(&flat, config.eps, config.min_pts)?;
    let num_clusters = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<Vector2<f64>>> = vec![Vec::new(); num_clusters.max(0) as usize];
    for (p, &l) in flat.iter().zip(&labels) {
        if l != NOISE {
            members[l as usize].push(*p);
        }
    }
    let polygons = members
        .iter()
        .enumerate()
        .map(|(id, pts)| {
            let verts = cluster_to_polygon(pts, config.alpha, config.padding)?;
            Ok(Polygon {
                cluster: id as i64,
                vertices: verts.iter().map(|v| [v.x, v.y]).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ObstacleRun {
        map: ObstacleMap { polygons },
        num_input: cloud.len(),
        num_downsampled: down.len(),
        num_inliers: inliers.len(),
        flat,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, Mask};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn k3() -> CameraIntrinsics {
        CameraIntrinsics::new(2.0, 3.0, 1.0, 1.0, 3, 3).unwrap()
    }

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::from_points(points.iter().map(|p| Vector3::from(*p)).collect()).unwrap()
    }

    #[test]
    fn center_pixel_lands_on_the_axis() {
        let c = depth_to_pointcloud(
            &DepthMap::constant(3, 3, 2.0),
            &k3(),
            &RigidTransform::identity(),
        )
        .unwrap();
        assert_eq!(c.len(), 9);
        assert_eq!(c.points[4], Vector3::new(0.0, 0.0, 2.0));
        assert_eq!(c.provenance[4], Some((1, 1)));
    }

    #[test]
    fn three_by_three_matches_hand_backprojection() {
        let values =
            Grid::from_vec(3, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]).unwrap();
        let valid: Mask = Grid::from_fn(3, 3, |x, y| (x + y) % 2 == 0);
        let depth = DepthMap::new(values, valid).unwrap();
        let pose = RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let c = depth_to_pointcloud(&depth, &k3(), &pose).unwrap();
        assert_eq!(c.len(), 5);
        // Pixel (2, 0) at depth 3: x = (2 − 1)/2·3, y = (0 − 1)/3·3.
        assert_eq!(c.provenance[1], Some((2, 0)));
        assert_relative_eq!(
            c.points[1],
            Vector3::new(1.5 + 1.0, -1.0, 3.0),
            epsilon = 1e-12
        );
        // Pixel (0, 2) at depth 7.
        assert_relative_eq!(
            c.points[3],
            Vector3::new(-3.5 + 1.0, 7.0 / 3.0, 7.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn invalid_map_gives_empty_cloud() {
        let depth = DepthMap::new(Grid::filled(3, 3, 1.0), Grid::filled(3, 3, false)).unwrap();
        assert!(
            depth_to_pointcloud(&depth, &k3(), &RigidTransform::identity())
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn forward_pose_maps_optical_axis_to_x() {
        let pose = forward_camera_pose(0.5);
        assert_relative_eq!(
            pose.transform_point(&Vector3::new(0.0, 0.0, 3.0)),
            Vector3::new(3.0, 0.0, 0.5)
        );
        // Image-down points toward the ground.
        assert_relative_eq!(
            pose.transform_point(&Vector3::new(0.0, 1.0, 0.0)),
            Vector3::new(0.0, 0.0, -0.5)
        );
    }

    #[test]
    fn voxel_merges_to_centroid() {
        let c = voxel_downsample(&cloud(&[[0.01, 0.01, 0.01], [0.03, 0.05, 0.07]]), 0.1).unwrap();
        assert_eq!(c.len(), 1);
        assert_relative_eq!(c.points[0], Vector3::new(0.02, 0.03, 0.04), epsilon = 1e-15);
        let c = voxel_downsample(
            &cloud(&[[0.0, 0.0, 0.0], [0.25, 0.25, 0.25], [-0.25, 0.0, 0.0]]),
            0.1,
        )
        .unwrap();
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn voxel_count_matches_hash_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<[f64; 3]> = (0..1000)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let oracle: HashSet<[i64; 3]> = pts
            .iter()
            .map(|p| p.map(|c| (c / 0.1).floor() as i64))
            .collect();
        assert_eq!(
            voxel_downsample(&cloud(&pts), 0.1).unwrap().len(),
            oracle.len()
        );
    }

    #[test]
    fn isolated_point_is_rejected() {
        let mut pts: Vec<[f64; 3]> = (0..10).map(|i| [0.05 * i as f64, 0.0, 1.0]).collect();
        pts.push([10.0, 0.0, 1.0]);
        let out = radial_outlier_filter(&cloud(&pts), 0.5, 2).unwrap();
        assert_eq!(out.len(), 10);
        assert!(out.points.iter().all(|p| p.x < 1.0));
    }

    #[test]
    fn outlier_filter_edge_cases() {
        let pair = cloud(&[[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]]);
        assert_eq!(radial_outlier_filter(&pair, 0.2, 1).unwrap().len(), 2);
        let far = cloud(&[[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]]);
        assert_eq!(radial_outlier_filter(&far, 0.2, 0).unwrap(), far);
        assert_eq!(radial_outlier_filter(&far, 0.2, 1).unwrap().len(), 0);
    }

    #[test]
    fn ground_boundary_is_removed() {
        let c = cloud(&[
            [0.0, 0.0, 0.1],
            [1.0, 0.0, 0.15],
            [2.0, 0.0, 0.16],
            [3.0, 0.0, 2.0],
            [4.0, 0.0, 2.01],
        ]);
        let flat = remove_ground_and_flatten(&c, 0.15, 2.0).unwrap();
        assert_eq!(flat, vec![Vector2::new(2.0, 0.0), Vector2::new(3.0, 0.0)]);
        assert!(
            remove_ground_and_flatten(&cloud(&[[0.0, 0.0, 0.1]]), 0.15, 2.0)
                .unwrap()
                .is_empty()
        );
        assert!(matches!(
            remove_ground_and_flatten(&c, 1.0, 1.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn two_boxes_give_two_polygons() {
        let mut pts = Vec::new();
        for (x0, y0) in [(2.0, -1.0), (4.0, 1.5)] {
            for i in 0..5 {
                for j in 0..5 {
                    for h in 0..5 {
                        pts.push([
                            x0 + 0.1 * i as f64,
                            y0 + 0.1 * j as f64,
                            0.3 + 0.2 * h as f64,
                        ]);
                    }
                }
            }
        }
        // Ground points and one stray point.
        pts.extend((0..50).map(|i| [0.1 * i as f64, 0.0, 0.0]));
        pts.push([20.0, 20.0, 1.0]);
        let run = build_obstacle_map(&cloud(&pts), &ObstacleConfig::default()).unwrap();
        assert_eq!(run.map.polygons.len(), 2);
        for (poly, lo) in run.map.polygons.iter().zip([(2.0, -1.0), (4.0, 1.5)]) {
            let v: Vec<_> = poly.vertices.iter().map(|v| Vector2::from(*v)).collect();
            assert!(is_convex_ccw(&v));
            assert!(contains(&v, &Vector2::new(lo.0 + 0.2, lo.1 + 0.2), 0.0));
        }
        for (p, &l) in run.flat.iter().zip(&run.labels) {
            if l != NOISE {
                let poly = &run.map.polygons[l as usize];
                let v: Vec<_> = poly.vertices.iter().map(|v| Vector2::from(*v)).collect();
                assert!(contains(&v, p, 1e-9));
            }
        }
    }

    proptest! {
        #[test]
        fn downsample_and_filter_never_grow(raw in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, 0.0f64..2.0), 0..200)) {
            let c = cloud(&raw.iter().map(|&(x, y, z)| [x, y, z]).collect::<Vec<_>>());
            let down = voxel_downsample(&c, 0.1).unwrap();
            let kept = radial_outlier_filter(&down, 0.3, 2).unwrap();
            prop_assert!(down.len() <= c.len());
            prop_assert!(kept.len() <= down.len());
        }

        #[test]
        fn flatten_matches_predicate(raw in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, -1.0f64..3.0), 0..100)) {
            let c = cloud(&raw.iter().map(|&(x, y, z)| [x, y, z]).collect::<Vec<_>>());
            let flat = remove_ground_and_flatten(&c, 0.15, 2.0).unwrap();
            let oracle: Vec<_> = raw.iter().filter(|p| p.2 > 0.15 && p.2 <= 2.0).map(|p| Vector2::new(p.0, p.1)).collect();
            prop_assert_eq!(flat, oracle);
        }
    }
}
