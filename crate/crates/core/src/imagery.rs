//! Thermal normalization, feature similarity and the RGB-aligned metadata
//! stack fed to a confidence estimator.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{taps_for, PixelCoordGrid};
use crate::grid::{DepthMap, Grid, Image3, Mask, MaskedGrid};
use crate::numeric::quantile_sorted;

/// Lower/upper percentiles used to stretch raw thermal counts.
pub const THERMAL_LOW_PERCENTILE: f64 = 0.02;
pub const THERMAL_HIGH_PERCENTILE: f64 = 0.98;

/// Feature vectors with norm below this are treated as zero vectors.
pub const MIN_FEATURE_NORM: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedThermal {
    pub image: Grid<f64>,
    pub p2: f64,
    pub p98: f64,
    /// Set when the 2nd–98th percentile range spans less than one count; the
    /// image is then all zeros.
    pub degenerate: bool,
}

/// Stretches raw 16-bit counts so the 2nd percentile maps to 0 and the 98th
/// to 1, clamping outside that range.
pub fn normalize_thermal(raw: &Grid<u16>) -> Result<NormalizedThermal> {
    if raw.is_empty() {
        return Err(Error::Empty("thermal image has no pixels".into()));
    }
    let mut sorted: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let p2 = quantile_sorted(&sorted, THERMAL_LOW_PERCENTILE).unwrap();
    let p98 = quantile_sorted(&sorted, THERMAL_HIGH_PERCENTILE).unwrap();
    let range = p98 - p2;
    if range < 1.0 {
        return Ok(NormalizedThermal {
            image: Grid::filled(raw.width(), raw.height(), 0.0),
            p2,
            p98,
            degenerate: true,
        });
    }
    Ok(NormalizedThermal {
        image: raw.map(|&v| ((v as f64 - p2) / range).clamp(0.0, 1.0)),
        p2,
        p98,
        degenerate: false,
    })
}

/// Channel-last `H × W × C` embedding grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::ShapeMismatch(
                "feature map needs at least one channel".into(),
            ));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height}x{channels} feature map",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite feature value {v}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }
}

/// Bilinearly samples every channel of `features` at `coords`. Returns the
/// sampled map on the coordinate grid (zeros where invalid) and its mask.
pub fn sample_features(
    features: &FeatureMap,
    coords: &PixelCoordGrid,
) -> Result<(FeatureMap, Mask)> {
    if coords.target_dims != (features.width, features.height) {
        return Err(Error::ShapeMismatch(
            "coordinates do not index this feature map".into(),
        ));
    }
    let c = features.channels;
    let taps = taps_for(coords, features.width, features.height);
    let rows: Vec<Option<Vec<f64>>> = taps
        .into_par_iter()
        .map(|t| {
            t.map(|t| {
                let mut acc = vec![0.0; c];
                for (i, w) in t.iter() {
                    for (a, v) in acc.iter_mut().zip(&features.data[i * c..(i + 1) * c]) {
                        *a += w * v;
                    }
                }
                acc
            })
        })
        .collect();
    let (w, h) = (coords.width(), coords.height());
    let mask = Grid::from_vec(w, h, rows.iter().map(Option::is_some).collect())?;
    let mut data = Vec::with_capacity(w * h * c);
    for r in rows {
        match r {
            Some(v) => data.extend(v),
            None => data.extend(std::iter::repeat_n(0.0, c)),
        }
    }
    Ok((FeatureMap::new(w, h, c, data)?, mask))
}

/// Per-pixel cosine similarity of two feature maps on the same grid.
///
/// Pixels where either vector is (numerically) zero get similarity 0 and
/// stay valid.
pub fn cosine_similarity_map(a: &FeatureMap, b: &FeatureMap) -> Result<MaskedGrid> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(Error::ShapeMismatch(format!(
            "feature maps {}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    let c = a.channels;
    let sims: Vec<f64> = a
        .data
        .par_chunks(c)
        .zip(b.data.par_chunks(c))
        .map(|(u, v)| cosine(u, v))
        .collect();
    Ok(MaskedGrid::all_valid(Grid::from_vec(
        a.width, a.height, sims,
    )?))
}

fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    let (nu, nv) = (nu.sqrt(), nv.sqrt());
    if nu < MIN_FEATURE_NORM || nv < MIN_FEATURE_NORM {
        return 0.0;
    }
    (dot / (nu * nv)).clamp(-1.0, 1.0)
}

/// Channel order of a [`MetadataStack`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetadataChannel {
    /// Cosine similarity of RGB features and thermal features read at `u_rt`.
    SimilarityRgb,
    /// Thermal-grid similarity resampled onto the RGB grid.
    SimilarityThermal,
    /// `|D̂_r − D̆_tr|`.
    Residual,
    WarpedThermalDepth,
    RgbDepth,
    Red,
    Green,
    Blue,
}

impl MetadataChannel {
    pub const ALL: [MetadataChannel; 8] = [
        MetadataChannel::SimilarityRgb,
        MetadataChannel::SimilarityThermal,
        MetadataChannel::Residual,
        MetadataChannel::WarpedThermalDepth,
        MetadataChannel::RgbDepth,
        MetadataChannel::Red,
        MetadataChannel::Green,
        MetadataChannel::Blue,
    ];
}

/// Eight RGB-aligned channels with per-channel and joint validity.
#[derive(Clone, Debug, PartialEq)]
pub struct MetadataStack {
    channels: Vec<MaskedGrid>,
    valid: Mask,
}

impl MetadataStack {
    pub const NUM_CHANNELS: usize = 8;

    pub fn channel(&self, which: MetadataChannel) -> &MaskedGrid {
        &self.channels[which as usize]
    }

    /// Joint validity: the conjunction of every channel's mask.
    pub fn valid(&self) -> &Mask {
        &self.valid
    }

    pub fn width(&self) -> usize {
        self.valid.width()
    }

    pub fn height(&self) -> usize {
        self.valid.height()
    }

    /// `(channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels.len(), self.height(), self.width())
    }

    /// Channel-major dense tensor, NaN where a channel is invalid.
    pub fn to_tensor(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::NUM_CHANNELS * self.valid.len());
        for ch in &self.channels {
            out.extend(
                ch.values
                    .iter()
                    .zip(ch.valid.iter())
                    .map(|(&v, &ok)| if ok { v } else { f64::NAN }),
            );
        }
        out
    }
}

/// Inputs for [`assemble_metadata`]. `u_rt` lives on the RGB grid and indexes
/// the thermal image; `u_tr` is the converse.
pub struct MetadataInputs<'a> {
    pub rgb_depth: &'a DepthMap,
    pub warped_thermal_depth: &'a DepthMap,
    pub rgb_features: &'a FeatureMap,
    pub thermal_features: &'a FeatureMap,
    pub u_rt: &'a PixelCoordGrid,
    pub u_tr: &'a PixelCoordGrid,
    pub rgb_image: &'a Image3,
}

pub fn assemble_metadata(inputs: &MetadataInputs<'_>) -> Result<MetadataStack> {
    let d_r = inputs.rgb_depth;
    let d_tr = inputs.warped_thermal_depth;
    let (w, h) = d_r.dims();
    let rgb_shape = |what: &str, dims: (usize, usize)| {
        if dims == (w, h) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what} is {}x{}, RGB grid is {w}x{h}",
                dims.0, dims.1
            )))
        }
    };
    rgb_shape("warped thermal depth", d_tr.dims())?;
    rgb_shape(
        "RGB features",
        (inputs.rgb_features.width, inputs.rgb_features.height),
    )?;
    rgb_shape("u_rt", (inputs.u_rt.width(), inputs.u_rt.height()))?;
    rgb_shape("RGB image", inputs.rgb_image.dims())?;
    let tf = inputs.thermal_features;
    if (inputs.u_tr.width(), inputs.u_tr.height()) != (tf.width, tf.height) {
        return Err(Error::ShapeMismatch(
            "u_tr must live on the thermal grid".into(),
        ));
    }

    // (I) RGB features vs thermal features read at u_rt
    let (f_t_at_r, mask_rt) = sample_features(tf, inputs.u_rt)?;
    let mut s_r = cosine_similarity_map(inputs.rgb_features, &f_t_at_r)?;
    s_r.valid = mask_rt;

    // (II) thermal-grid similarity, then resampled at u_rt
    let (f_r_at_t, mask_tr) = sample_features(inputs.rgb_features, inputs.u_tr)?;
    let mut s_t = cosine_similarity_map(tf, &f_r_at_t)?;
    s_t.valid = mask_tr;
    let s_tr = crate::geometry::bilinear_sample(&s_t, inputs.u_rt)?;

    // (III)–(V)
    let both = d_r.valid().and(d_tr.valid());
    let residual = Grid::from_fn(w, h, |x, y| {
        let i = y * w + x;
        if both.data()[i] {
            (d_r.values().data()[i] - d_tr.values().data()[i]).abs()
        } else {
            f64::NAN
        }
    });

    let mut channels = vec![
        s_r,
        s_tr,
        MaskedGrid::new(residual, both)?,
        d_tr.to_masked(),
        d_r.to_masked(),
    ];
    for c in 0..3 {
        channels.push(MaskedGrid::all_valid(inputs.rgb_image.map(|px| px[c])));
    }
    let mut valid = Grid::filled(w, h, true);
    for ch in &channels {
        valid = valid.and(&ch.valid);
    }
    Ok(MetadataStack { channels, valid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{warp_depth, CameraIntrinsics, RigidTransform};
    use approx::assert_abs_diff_eq;

    fn sort_percentile_oracle(values: &[f64], p: f64) -> f64 {
        // independent: rank arithmetic on a sorted copy
        let mut s = values.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = p * (s.len() as f64 - 1.0);
        let below = rank.floor();
        let w = rank - below;
        let i = below as usize;
        if i + 1 < s.len() {
            s[i] * (1.0 - w) + s[i + 1] * w
        } else {
            s[i]
        }
    }

    #[test]
    fn ramp_endpoints_hit_zero_and_one() {
        // 51 values 0..=50: p2 = 1, p98 = 49
        let raw = Grid::from_fn(51, 1, |x, _| x as u16);
        let n = normalize_thermal(&raw).unwrap();
        assert_eq!((n.p2, n.p98), (1.0, 49.0));
        assert_eq!(*n.image.get(1, 0), 0.0);
        assert_eq!(*n.image.get(49, 0), 1.0);
        assert_eq!(*n.image.get(0, 0), 0.0);
        assert_eq!(*n.image.get(50, 0), 1.0);
    }

    #[test]
    fn shuffled_uniform_sample_matches_sort_oracle() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut vals: Vec<u16> = (0..10_000).collect();
        vals.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(7));
        let raw = Grid::from_vec(100, 100, vals.clone()).unwrap();
        let n = normalize_thermal(&raw).unwrap();
        let as_f: Vec<f64> = vals.iter().map(|&v| v as f64).collect();
        let p2 = sort_percentile_oracle(&as_f, 0.02);
        let p98 = sort_percentile_oracle(&as_f, 0.98);
        assert_abs_diff_eq!(n.p2, p2, epsilon = 1e-12);
        assert_abs_diff_eq!(n.p98, p98, epsilon = 1e-12);
        let i = vals.iter().position(|&v| v == 5000).unwrap();
        assert_abs_diff_eq!(
            n.image.data()[i],
            (5000.0 - p2) / (p98 - p2),
            epsilon = 1e-12
        );
    }

    #[test]
    fn flat_image_is_degenerate() {
        let n = normalize_thermal(&Grid::filled(4, 4, 1234u16)).unwrap();
        assert!(n.degenerate);
        assert!(n.image.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cosine_examples() {
        let a = FeatureMap::new(1, 1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let b = FeatureMap::new(1, 1, 3, vec![4.0, 5.0, 6.0]).unwrap();
        let s = cosine_similarity_map(&a, &b).unwrap();
        let expected = 32.0 / (14f64.sqrt() * 77f64.sqrt());
        assert_abs_diff_eq!(s.values.data()[0], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.974632, epsilon = 1e-6);

        let self_sim = cosine_similarity_map(&a, &a).unwrap();
        assert_abs_diff_eq!(self_sim.values.data()[0], 1.0, epsilon = 1e-15);

        let x = FeatureMap::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let y = FeatureMap::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(cosine_similarity_map(&x, &y).unwrap().values.data()[0], 0.0);

        let z = FeatureMap::new(1, 1, 2, vec![0.0, 0.0]).unwrap();
        let s = cosine_similarity_map(&x, &z).unwrap();
        assert_eq!(s.values.data()[0], 0.0);
        assert!(s.valid.data()[0]);
    }

    #[test]
    fn cosine_shape_mismatch() {
        let a = FeatureMap::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let b = FeatureMap::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!(cosine_similarity_map(&a, &b).is_err());
    }

    fn identity_setup(w: usize, h: usize) -> (CameraIntrinsics, DepthMap, FeatureMap, Image3) {
        let cam = CameraIntrinsics::new(10.0, 10.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap();
        let depth = DepthMap::from_values(Grid::from_fn(w, h, |x, y| 2.0 + 0.1 * (x + y) as f64));
        let feats = FeatureMap::from_fn(w, h, 4, |x, y, c| {
            ((x * 3 + y * 5 + c * 7) % 11) as f64 - 4.5
        });
        let img = Grid::from_fn(w, h, |x, y| [x as f64 / w as f64, y as f64 / h as f64, 0.5]);
        (cam, depth, feats, img)
    }

    #[test]
    fn identity_rig_metadata() {
        let (cam, depth, feats, img) = identity_setup(6, 5);
        let id = RigidTransform::identity();
        let fwd = warp_depth(&depth, &cam, &cam, &id).unwrap();
        let stack = assemble_metadata(&MetadataInputs {
            rgb_depth: &depth,
            warped_thermal_depth: &depth,
            rgb_features: &feats,
            thermal_features: &feats,
            u_rt: &fwd.coords,
            u_tr: &fwd.coords,
            rgb_image: &img,
        })
        .unwrap();
        assert_eq!(stack.shape(), (8, 5, 6));
        assert_eq!(stack.valid().count(), 30);
        for i in 0..30 {
            assert_abs_diff_eq!(
                stack.channel(MetadataChannel::SimilarityRgb).values.data()[i],
                1.0,
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                stack
                    .channel(MetadataChannel::SimilarityThermal)
                    .values
                    .data()[i],
                1.0,
                epsilon = 1e-12
            );
            assert_eq!(
                stack.channel(MetadataChannel::Residual).values.data()[i],
                0.0
            );
        }
    }

    #[test]
    fn out_of_bounds_correspondence_invalidates_thermal_channels() {
        let (cam, depth, feats, img) = identity_setup(6, 5);
        let id = RigidTransform::identity();
        let mut coords = warp_depth(&depth, &cam, &cam, &id).unwrap().coords;
        coords.x.set(2, 2, 7.5);
        coords.valid.set(2, 2, true);
        let stack = assemble_metadata(&MetadataInputs {
            rgb_depth: &depth,
            warped_thermal_depth: &depth,
            rgb_features: &feats,
            thermal_features: &feats,
            u_rt: &coords,
            u_tr: &coords,
            rgb_image: &img,
        })
        .unwrap();
        let i = 2 * 6 + 2;
        assert!(!stack.channel(MetadataChannel::SimilarityRgb).valid.data()[i]);
        assert!(
            !stack
                .channel(MetadataChannel::SimilarityThermal)
                .valid
                .data()[i]
        );
        assert!(!stack.valid().data()[i]);
        assert!(stack.channel(MetadataChannel::RgbDepth).valid.data()[i]);
        assert!(stack.to_tensor()[i].is_nan());
    }
}
