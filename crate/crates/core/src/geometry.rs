//! Pinhole cameras, rigid transforms and cross-camera depth warping.
//!
//! Pixel `(u, v)` samples the continuous image plane at exactly `(u, v)`, so
//! the valid sampling domain of a `W × H` image is `[0, W−1] × [0, H−1]`.
//! Warping keeps every projected pixel (no z-buffer); occlusions are left to
//! the residual trimming done by the losses.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Grid, Mask, MaskedGrid};

/// Points with camera-frame depth at or below this value are treated as
/// behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Pinhole intrinsics plus image size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fx.is_finite() && self.fy > 0.0 && self.fy.is_finite()) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive and finite (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidIntrinsics(
                "principal point must be finite".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidIntrinsics(format!(
                "image size must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Ray through `pixel` on the `z = 1` plane, i.e. `K⁻¹ [u v 1]ᵀ`.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    #[inline]
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Rotation plus translation (meters). `T_b_a` maps points expressed in
/// frame `a` into frame `b`: `p_b = R p_a + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity())
            .abs()
            .max();
        if !(ortho <= ORTHONORMAL_TOL) {
            return Err(Error::InvalidTransform(format!(
                "rotation is not orthonormal (max |RᵀR − I| = {ortho:e})"
            )));
        }
        let det = rotation.determinant();
        if !((det - 1.0).abs() <= ORTHONORMAL_TOL) {
            return Err(Error::InvalidTransform(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        if !translation.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidTransform("translation must be finite".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation given as an axis-angle vector (radians).
    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::from_scaled_axis(axis_angle).matrix(),
            translation,
        }
    }

    /// Parses a homogeneous 4×4 matrix given row-major.
    pub fn from_row_major(m: &[f64]) -> Result<Self> {
        if m.len() != 16 {
            return Err(Error::InvalidTransform(format!(
                "expected 16 numbers, got {}",
                m.len()
            )));
        }
        let mat = Matrix4::from_row_slice(m);
        let last = mat.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(Error::InvalidTransform(
                "last row of the homogeneous matrix must be [0, 0, 0, 1]".into(),
            ));
        }
        let rotation: Matrix3<f64> = mat.fixed_view::<3, 3>(0, 0).into_owned();
        let translation: Vector3<f64> = mat.fixed_view::<3, 1>(0, 3).into_owned();
        Self::new(rotation, translation)
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(16);
        for r in 0..3 {
            for c in 0..3 {
                out.push(self.rotation[(r, c)]);
            }
            out.push(self.translation[r]);
        }
        out.extend_from_slice(&[0.0, 0.0, 0.0, 1.0]);
        out
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

impl TryFrom<Vec<f64>> for RigidTransform {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_row_major(&v)
    }
}

impl From<RigidTransform> for Vec<f64> {
    fn from(t: RigidTransform) -> Self {
        t.to_row_major()
    }
}

/// Projects a camera-frame point to pixel coordinates and depth.
pub fn project(point: &Vector3<f64>, k: &CameraIntrinsics) -> Result<(Vector2<f64>, f64)> {
    let z = point.z;
    if !(z > MIN_DEPTH) {
        return Err(Error::BehindCamera(z));
    }
    Ok((
        Vector2::new(k.fx * point.x / z + k.cx, k.fy * point.y / z + k.cy),
        z,
    ))
}

/// Lifts a pixel at the given depth back into the camera frame.
pub fn backproject(pixel: &Vector2<f64>, depth: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::NonPositiveDepth(depth));
    }
    Ok(k.ray(pixel.x, pixel.y) * depth)
}

/// Sub-pixel coordinates in a target camera for every pixel of a source grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelCoordGrid {
    pub x: Grid<f64>,
    pub y: Grid<f64>,
    pub valid: Mask,
    /// Size of the image the coordinates index into.
    pub target_dims: (usize, usize),
}

impl PixelCoordGrid {
    pub fn width(&self) -> usize {
        self.x.width()
    }

    pub fn height(&self) -> usize {
        self.x.height()
    }

    pub fn coord(&self, x: usize, y: usize) -> Option<(f64, f64)> {
        let i = self.x.index_of(x, y);
        self.valid.data()[i].then(|| (self.x.data()[i], self.y.data()[i]))
    }
}

/// Result of warping a depth map into another camera.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedDepth {
    /// Transformed depth (destination-frame Z) stored on the *source* grid.
    pub depth: DepthMap,
    /// Destination sub-pixel location of each source pixel.
    pub coords: PixelCoordGrid,
}

/// Warps `src` into the destination camera.
///
/// Each valid source pixel is back-projected, moved by `t_dst_src` and
/// projected with `k_dst`. Pixels landing behind the destination camera or
/// outside its image are invalid in both outputs.
pub fn warp_depth(
    src: &DepthMap,
    k_src: &CameraIntrinsics,
    k_dst: &CameraIntrinsics,
    t_dst_src: &RigidTransform,
) -> Result<WarpedDepth> {
    let (w, h) = src.dims();
    if (w, h) != k_src.dims() {
        return Err(Error::ShapeMismatch(format!(
            "depth map is {w}x{h} but source camera is {}x{}",
            k_src.width, k_src.height
        )));
    }
    let identity = k_src == k_dst && t_dst_src.is_identity();
    let rot = t_dst_src.rotation();
    let t = t_dst_src.translation();
    let values = src.values().data();
    let valid = src.valid().data();

    // (depth, u, v) per pixel, None when invalid
    let per_pixel: Vec<Option<(f64, f64, f64)>> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            if !valid[i] {
                return None;
            }
            let (px, py) = ((i % w) as f64, (i / w) as f64);
            let d = values[i];
            if identity {
                return (d > MIN_DEPTH).then_some((d, px, py));
            }
            let dir = rot * k_src.ray(px, py);
            let q = dir * d + t;
            if !(q.z > MIN_DEPTH) {
                return None;
            }
            let u = k_dst.fx * q.x / q.z + k_dst.cx;
            let v = k_dst.fy * q.y / q.z + k_dst.cy;
            k_dst.contains(u, v).then_some((q.z, u, v))
        })
        .collect();

    let mut depth = Vec::with_capacity(w * h);
    let mut cx = Vec::with_capacity(w * h);
    let mut cy = Vec::with_capacity(w * h);
    let mut ok = Vec::with_capacity(w * h);
    for p in per_pixel {
        match p {
            Some((z, u, v)) => {
                depth.push(z);
                cx.push(u);
                cy.push(v);
                ok.push(true);
            }
            None => {
                depth.push(f64::NAN);
                cx.push(f64::NAN);
                cy.push(f64::NAN);
                ok.push(false);
            }
        }
    }
    let mask = Grid::from_vec(w, h, ok)?;
    Ok(WarpedDepth {
        depth: DepthMap::new(Grid::from_vec(w, h, depth)?, mask.clone())?,
        coords: PixelCoordGrid {
            x: Grid::from_vec(w, h, cx)?,
            y: Grid::from_vec(w, h, cy)?,
            valid: mask,
            target_dims: k_dst.dims(),
        },
    })
}

/// Up to four `(index, weight)` pairs of a bilinear lookup. Only taps with
/// non-zero weight are stored, so integer coordinates read exactly one cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BilinearTaps {
    taps: [(usize, f64); 4],
    len: usize,
}

impl BilinearTaps {
    /// Taps for sampling a `width × height` raster at `(x, y)`; `None` when
    /// the location is outside `[0, W−1] × [0, H−1]`.
    pub fn new(x: f64, y: f64, width: usize, height: usize) -> Option<Self> {
        if !(x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64) {
            return None;
        }
        let x0 = (x.floor() as usize).min(width - 1);
        let y0 = (y.floor() as usize).min(height - 1);
        let x1 = (x0 + 1).min(width - 1);
        let y1 = (y0 + 1).min(height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let candidates = [
            (y0 * width + x0, (1.0 - fx) * (1.0 - fy)),
            (y0 * width + x1, fx * (1.0 - fy)),
            (y1 * width + x0, (1.0 - fx) * fy),
            (y1 * width + x1, fx * fy),
        ];
        let mut taps = [(0, 0.0); 4];
        let mut len = 0;
        for (idx, wgt) in candidates {
            if wgt > 0.0 {
                taps[len] = (idx, wgt);
                len += 1;
            }
        }
        Some(Self { taps, len })
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.taps[..self.len].iter().copied()
    }

    /// Weighted sum over taps, or `None` if any contributing cell is invalid.
    #[inline]
    pub fn sample(&self, values: &[f64], valid: &[bool]) -> Option<f64> {
        let mut acc = 0.0;
        for (i, w) in self.iter() {
            if !valid[i] {
                return None;
            }
            acc += w * values[i];
        }
        Some(acc)
    }
}

/// Per-pixel taps for a coordinate grid, `None` where coordinates are invalid
/// or out of bounds.
pub fn taps_for(coords: &PixelCoordGrid, width: usize, height: usize) -> Vec<Option<BilinearTaps>> {
    coords
        .x
        .data()
        .par_iter()
        .zip(coords.y.data().par_iter())
        .zip(coords.valid.data().par_iter())
        .map(|((&x, &y), &ok)| {
            if ok {
                BilinearTaps::new(x, y, width, height)
            } else {
                None
            }
        })
        .collect()
}

/// Samples `map` at sub-pixel `coords`.
///
/// The output lives on the coordinate grid. It is invalid where the
/// coordinate is invalid or any neighbor with non-zero weight is invalid.
pub fn bilinear_sample(map: &MaskedGrid, coords: &PixelCoordGrid) -> Result<MaskedGrid> {
    let (w, h) = (map.width(), map.height());
    if coords.target_dims != (w, h) {
        return Err(Error::ShapeMismatch(format!(
            "coordinates index a {}x{} image but the map is {w}x{h}",
            coords.target_dims.0, coords.target_dims.1
        )));
    }
    let values = map.values.data();
    let valid = map.valid.data();
    let sampled: Vec<Option<f64>> = taps_for(coords, w, h)
        .into_par_iter()
        .map(|t| t.and_then(|t| t.sample(values, valid)))
        .collect();
    let (ow, oh) = (coords.width(), coords.height());
    let mask = Grid::from_vec(ow, oh, sampled.iter().map(Option::is_some).collect())?;
    let out = Grid::from_vec(
        ow,
        oh,
        sampled.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
    )?;
    MaskedGrid::new(out, mask)
}

/// Thermal-predicted depth resampled onto the RGB grid and expressed in the
/// RGB camera frame.
///
/// The thermal depth is first warped into the RGB frame (kept on the thermal
/// grid), then read back at `u_rt`, the thermal location of every RGB pixel.
pub fn warped_thermal_depth(
    d_t: &DepthMap,
    u_rt: &PixelCoordGrid,
    k_t: &CameraIntrinsics,
    k_r: &CameraIntrinsics,
    t_r_t: &RigidTransform,
) -> Result<DepthMap> {
    let d_tr = warp_depth(d_t, k_t, k_r, t_r_t)?;
    let sampled = bilinear_sample(&d_tr.depth.to_masked(), u_rt)?;
    Ok(DepthMap::from_masked(sampled))
}

/// The thermal→RGB resampling chain with its linearization cached.
///
/// Because `u_rt` depends only on the RGB depth, the warped thermal depth at
/// RGB pixel `j` is affine in the thermal depths it reads:
/// `D̆(j) = Σ_k w_jk (a_k D_t(k) + t_z)` with `a_k = r₃ · K_t⁻¹ ũ_k`. This
/// struct stores the taps and the per-pixel `a_k` so gradients with respect to
/// `D̆` can be pulled back to the thermal depth.
#[derive(Clone, Debug)]
pub struct ThermalToRgbWarp {
    taps: Vec<Option<BilinearTaps>>,
    depth_coeff: Grid<f64>,
    thermal_dims: (usize, usize),
    rgb_dims: (usize, usize),
}

impl ThermalToRgbWarp {
    pub fn new(
        u_rt: &PixelCoordGrid,
        k_t: &CameraIntrinsics,
        k_r: &CameraIntrinsics,
        t_r_t: &RigidTransform,
    ) -> Result<Self> {
        if u_rt.target_dims != k_t.dims() {
            return Err(Error::ShapeMismatch(
                "u_rt must index the thermal image".into(),
            ));
        }
        if (u_rt.width(), u_rt.height()) != k_r.dims() {
            return Err(Error::ShapeMismatch(
                "u_rt must live on the RGB grid".into(),
            ));
        }
        let r3 = t_r_t.rotation().row(2).transpose();
        let depth_coeff = Grid::from_fn(k_t.width, k_t.height, |x, y| {
            r3.dot(&k_t.ray(x as f64, y as f64))
        });
        Ok(Self {
            taps: taps_for(u_rt, k_t.width, k_t.height),
            depth_coeff,
            thermal_dims: k_t.dims(),
            rgb_dims: k_r.dims(),
        })
    }

    /// `∂D_tr(k) / ∂D_t(k)` for thermal pixel `k`.
    pub fn depth_coefficients(&self) -> &Grid<f64> {
        &self.depth_coeff
    }

    /// Bilinear taps (into the thermal grid) of each RGB pixel.
    pub fn taps(&self) -> &[Option<BilinearTaps>] {
        &self.taps
    }

    /// Resamples an already-warped thermal depth (`D_tr`, thermal grid) onto
    /// the RGB grid.
    pub fn resample(&self, d_tr: &DepthMap) -> Result<DepthMap> {
        if d_tr.dims() != self.thermal_dims {
            return Err(Error::ShapeMismatch(
                "D_tr must be on the thermal grid".into(),
            ));
        }
        let values = d_tr.values().data();
        let valid = d_tr.valid().data();
        let (w, h) = self.rgb_dims;
        let out: Vec<f64> = self
            .taps
            .iter()
            .map(|t| t.and_then(|t| t.sample(values, valid)).unwrap_or(f64::NAN))
            .collect();
        Ok(DepthMap::from_values(Grid::from_vec(w, h, out)?))
    }

    /// Pulls a gradient w.r.t. the RGB-grid warped depth back to the thermal
    /// depth. Pixels where `warped` is invalid carry no gradient.
    pub fn pullback(&self, grad_warped: &Grid<f64>, warped: &DepthMap) -> Result<Grid<f64>> {
        if grad_warped.dims() != self.rgb_dims || warped.dims() != self.rgb_dims {
            return Err(Error::ShapeMismatch(
                "gradient must be on the RGB grid".into(),
            ));
        }
        let (tw, th) = self.thermal_dims;
        let mut out = Grid::filled(tw, th, 0.0);
        let coeff = self.depth_coeff.data();
        let acc = out.data_mut();
        for (j, taps) in self.taps.iter().enumerate() {
            let g = grad_warped.data()[j];
            if g == 0.0 || !warped.valid().data()[j] {
                continue;
            }
            if let Some(taps) = taps {
                for (k, w) in taps.iter() {
                    acc[k] += w * coeff[k] * g;
                }
            }
        }
        Ok(out)
    }
}

/// Calibrated RGB/thermal camera pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRig {
    pub rgb: CameraIntrinsics,
    pub thermal: CameraIntrinsics,
    /// Maps RGB-frame points into the thermal frame.
    #[serde(rename = "T_thermal_rgb")]
    pub t_thermal_rgb: RigidTransform,
}

impl CameraRig {
    pub fn validate(&self) -> Result<()> {
        self.rgb.validate()?;
        self.thermal.validate()
    }

    pub fn t_rgb_thermal(&self) -> RigidTransform {
        self.t_thermal_rgb.inverse()
    }
}
