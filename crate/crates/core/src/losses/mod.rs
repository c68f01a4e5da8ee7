//! Training losses with analytic gradients.
//!
//! Every loss returns a [`LossResult`] whose `gradients` map holds an entry
//! only for the inputs that receive gradient. Stop-gradient inputs (the RGB
//! depth and confidence inside the consistency loss, the prediction inside
//! the Laplacian NLL) never appear as keys.
//!
//! Sums are accumulated with [`pairwise_sum`] over row-major pixel order, so
//! values are bit-stable across runs.

mod masks;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Grid, Image3, Mask, MaskedGrid};
use crate::numeric::{pairwise_sum, sign0};

pub use masks::{similarity_mask, trim_mask, trim_threshold};

/// Confidence values are clamped into `[CONFIDENCE_MIN, CONFIDENCE_MAX]`
/// before entering the log-likelihood.
pub const CONFIDENCE_MIN: f64 = 1e-6;
pub const CONFIDENCE_MAX: f64 = 1.0 - 1e-6;

/// Fraction of residuals kept by trimming (the largest 20% are dropped).
pub const DEFAULT_KEEP_FRACTION: f64 = 0.8;
/// Fraction of pixels kept by the feature-similarity mask.
pub const DEFAULT_SIMILARITY_KEEP: f64 = 0.8;
pub const DEFAULT_LAMBDA_SILOG: f64 = 0.15;

/// Names of differentiable loss inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradTarget {
    /// Prediction argument of a single SILOG term.
    Pred,
    /// Per-pixel confidence `Ŵ_r`.
    Confidence,
    /// Thermal depth resampled onto the RGB grid, `D̆_tr`.
    WarpedThermal,
    /// The smoothed field of a single smoothness term.
    Smoothed,
    /// RGB depth prediction `D̂_r` (combined loss).
    PredRgb,
    /// Thermal depth prediction `D̂_t` (combined loss).
    PredThermal,
}

impl GradTarget {
    pub fn as_str(&self) -> &'static str {
        match self {
            GradTarget::Pred => "pred",
            GradTarget::Confidence => "confidence",
            GradTarget::WarpedThermal => "warped_thermal",
            GradTarget::Smoothed => "smoothed",
            GradTarget::PredRgb => "pred_rgb",
            GradTarget::PredThermal => "pred_thermal",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LossFlags {
    /// The loss sits at a point where it is not differentiable (SILOG at
    /// zero); gradients are reported as zero.
    pub non_differentiable: bool,
    /// No pixel survived masking; value and gradients are zero.
    pub empty: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossResult {
    pub name: &'static str,
    pub value: f64,
    pub gradients: BTreeMap<GradTarget, Grid<f64>>,
    pub num_pixels_kept: usize,
    pub flags: LossFlags,
    /// Unweighted term values, filled by [`combined_loss`].
    pub components: BTreeMap<&'static str, f64>,
}

impl LossResult {
    fn new(name: &'static str, value: f64, kept: usize) -> Self {
        Self {
            name,
            value,
            gradients: BTreeMap::new(),
            num_pixels_kept: kept,
            flags: LossFlags::default(),
            components: BTreeMap::new(),
        }
    }

    pub fn gradient(&self, target: GradTarget) -> Option<&Grid<f64>> {
        self.gradients.get(&target)
    }

    pub fn report(&self) -> LossReport {
        LossReport {
            name: self.name.to_string(),
            value: self.value,
            num_pixels_kept: self.num_pixels_kept,
            grad_norms: self
                .gradients
                .iter()
                .map(|(k, g)| {
                    let sq: Vec<f64> = g.iter().map(|v| v * v).collect();
                    (k.as_str().to_string(), pairwise_sum(&sq).sqrt())
                })
                .collect(),
        }
    }
}

/// JSON summary of a loss evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub name: String,
    pub value: f64,
    pub num_pixels_kept: usize,
    pub grad_norms: BTreeMap<String, f64>,
}

/// Which pixel count normalizes the trimmed losses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalizer {
    /// Pixels remaining after trimming and masking.
    #[default]
    KeptPixels,
    /// Pixels valid before trimming.
    ValidPixels,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NllOptions {
    pub keep_fraction: f64,
    pub normalizer: Normalizer,
}

impl Default for NllOptions {
    fn default() -> Self {
        Self {
            keep_fraction: DEFAULT_KEEP_FRACTION,
            normalizer: Normalizer::KeptPixels,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyOptions {
    pub keep_fraction: f64,
    pub similarity_keep: f64,
    pub normalizer: Normalizer,
}

impl Default for ConsistencyOptions {
    fn default() -> Self {
        Self {
            keep_fraction: DEFAULT_KEEP_FRACTION,
            similarity_keep: DEFAULT_SIMILARITY_KEEP,
            normalizer: Normalizer::KeptPixels,
        }
    }
}

/// Scale-invariant log loss `sqrt(mean g² − λ mean(g)²)`, `g = log pred −
/// log gt`, over pixels valid in both maps. Gradient w.r.t. `pred`.
pub fn silog(pred: &DepthMap, gt: &DepthMap, lambda: f64) -> Result<LossResult> {
    pred.values()
        .ensure_same_shape(gt.values(), "silog pred vs gt")?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!(
            "silog lambda must lie in [0, 1], got {lambda}"
        )));
    }
    let valid = pred.valid().and(gt.valid());
    let idx: Vec<usize> = (0..valid.len()).filter(|&i| valid.data()[i]).collect();
    if idx.is_empty() {
        return Err(Error::Empty(
            "silog needs at least one shared valid pixel".into(),
        ));
    }
    let p = pred.values().data();
    let t = gt.values().data();
    let g: Vec<f64> = idx.iter().map(|&i| p[i].ln() - t[i].ln()).collect();
    let n = g.len() as f64;
    let sum_g = pairwise_sum(&g);
    let sum_g2 = pairwise_sum(&g.iter().map(|v| v * v).collect::<Vec<_>>());
    let var = (sum_g2 / n - lambda * (sum_g / n) * (sum_g / n)).max(0.0);
    let value = var.sqrt();

    let mut out = LossResult::new("silog", value, idx.len());
    let mut grad = Grid::filled(pred.width(), pred.height(), 0.0);
    if value > 0.0 {
        let mean_term = lambda * sum_g / (n * n);
        for (&i, &gi) in idx.iter().zip(&g) {
            grad.data_mut()[i] = (gi / n - mean_term) / (value * p[i]);
        }
    } else {
        out.flags.non_differentiable = true;
    }
    out.gradients.insert(GradTarget::Pred, grad);
    Ok(out)
}

/// Laplacian negative log-likelihood `mean(W·|pred − gt| − β log W)` over the
/// trimmed set of pixels valid in both maps. Gradient w.r.t. `W` only.
pub fn laplacian_nll(
    confidence: &Grid<f64>,
    pred: &DepthMap,
    gt: &DepthMap,
    beta: f64,
    options: &NllOptions,
) -> Result<LossResult> {
    confidence.ensure_same_shape(gt.values(), "confidence vs gt")?;
    pred.values().ensure_same_shape(gt.values(), "pred vs gt")?;
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!(
            "beta must be non-negative, got {beta}"
        )));
    }
    let valid = pred.valid().and(gt.valid());
    if valid.count() == 0 {
        return Err(Error::Empty(
            "nll needs at least one pixel with ground truth".into(),
        ));
    }
    for (i, (&w, &ok)) in confidence.iter().zip(valid.iter()).enumerate() {
        if ok && !(w > 0.0 && w.is_finite()) {
            let (x, y) = confidence.coords_of(i);
            return Err(Error::Domain(format!(
                "confidence {w} at ({x}, {y}) must be positive"
            )));
        }
    }
    let residual = Grid::from_vec(
        gt.width(),
        gt.height(),
        pred.values()
            .iter()
            .zip(gt.values().iter())
            .map(|(p, t)| (p - t).abs())
            .collect(),
    )?;
    let kept = trim_mask(&residual, &valid, options.keep_fraction)?;
    let count = kept.count();
    let norm = match options.normalizer {
        Normalizer::KeptPixels => count,
        Normalizer::ValidPixels => valid.count(),
    };
    let mut out = LossResult::new("laplacian_nll", 0.0, count);
    let mut grad = Grid::filled(gt.width(), gt.height(), 0.0);
    if count == 0 {
        out.flags.empty = true;
        out.gradients.insert(GradTarget::Confidence, grad);
        return Ok(out);
    }
    let n = norm as f64;
    let mut terms = Vec::with_capacity(count);
    for i in 0..kept.len() {
        if !kept.data()[i] {
            continue;
        }
        let raw = confidence.data()[i];
        let w = raw.clamp(CONFIDENCE_MIN, CONFIDENCE_MAX);
        let r = residual.data()[i];
        terms.push(w * r - beta * w.ln());
        if raw == w {
            grad.data_mut()[i] = (r - beta / w) / n;
        }
    }
    out.value = pairwise_sum(&terms) / n;
    out.gradients.insert(GradTarget::Confidence, grad);
    Ok(out)
}

/// Confidence-weighted L1 distillation loss between the RGB depth and the
/// resampled thermal depth. Gradient w.r.t. `D̆_tr` only.
///
/// Pixels are kept when both depths are valid, the similarity mask (if any)
/// passes and the residual survives trimming.
pub fn consistency(
    confidence: &Grid<f64>,
    rgb_depth: &DepthMap,
    warped_thermal: &DepthMap,
    similarity: Option<&MaskedGrid>,
    options: &ConsistencyOptions,
) -> Result<LossResult> {
    Ok(consistency_detailed(confidence, rgb_depth, warped_thermal, similarity, options)?.result)
}

/// [`consistency`] plus the masks it used.
#[derive(Clone, Debug)]
pub struct ConsistencyEval {
    pub result: LossResult,
    pub kept: Mask,
    pub residual: Grid<f64>,
    /// Trimming threshold on `|D̂_r − D̆_tr|`, if any pixel was valid.
    pub trim_threshold: Option<f64>,
}

pub fn consistency_detailed(
    confidence: &Grid<f64>,
    rgb_depth: &DepthMap,
    warped_thermal: &DepthMap,
    similarity: Option<&MaskedGrid>,
    options: &ConsistencyOptions,
) -> Result<ConsistencyEval> {
    let (w, h) = rgb_depth.dims();
    confidence.ensure_same_shape(rgb_depth.values(), "confidence vs RGB depth")?;
    warped_thermal
        .values()
        .ensure_same_shape(rgb_depth.values(), "warped thermal vs RGB depth")?;
    let valid = rgb_depth.valid().and(warped_thermal.valid());
    for (i, (&c, &ok)) in confidence.iter().zip(valid.iter()).enumerate() {
        if ok && !(c >= 0.0 && c.is_finite()) {
            let (x, y) = confidence.coords_of(i);
            return Err(Error::Domain(format!(
                "confidence {c} at ({x}, {y}) must be non-negative"
            )));
        }
    }
    let d_r = rgb_depth.values().data();
    let d_tr = warped_thermal.values().data();
    let residual = Grid::from_fn(w, h, |x, y| {
        let i = y * w + x;
        if valid.data()[i] {
            (d_r[i] - d_tr[i]).abs()
        } else {
            f64::NAN
        }
    });
    let threshold = if options.keep_fraction < 1.0 {
        trim_threshold(&residual, &valid, options.keep_fraction)?
    } else {
        None
    };
    let mut kept = trim_mask(&residual, &valid, options.keep_fraction)?;
    if let Some(s) = similarity {
        s.values
            .ensure_same_shape(rgb_depth.values(), "similarity vs RGB depth")?;
        kept = kept.and(&similarity_mask(s, options.similarity_keep)?);
    }
    let count = kept.count();
    let norm = match options.normalizer {
        Normalizer::KeptPixels => count,
        Normalizer::ValidPixels => valid.count(),
    };
    let mut result = LossResult::new("consistency", 0.0, count);
    let mut grad = Grid::filled(w, h, 0.0);
    if count == 0 {
        result.flags.empty = true;
    } else {
        let m = norm as f64;
        let mut terms = Vec::with_capacity(count);
        for i in 0..kept.len() {
            if !kept.data()[i] {
                continue;
            }
            let c = confidence.data()[i];
            terms.push(c * residual.data()[i]);
            grad.data_mut()[i] = -c * sign0(d_r[i] - d_tr[i]) / m;
        }
        result.value = pairwise_sum(&terms) / m;
    }
    result.gradients.insert(GradTarget::WarpedThermal, grad);
    Ok(ConsistencyEval {
        result,
        kept,
        residual,
        trim_threshold: threshold,
    })
}

/// Channel mean of an RGB image.
pub fn mean_intensity(image: &Image3) -> Grid<f64> {
    image.map(|p| (p[0] + p[1] + p[2]) / 3.0)
}

/// Edge-aware smoothness: mean over interior pixels of
/// `|∂x X|·exp(−|∂x Ī|) + |∂y X|·exp(−|∂y Ī|)` with forward differences and `Ī`
/// the channel-mean image. Gradient w.r.t. `X`.
pub fn smoothness(field: &Grid<f64>, image: &Image3) -> Result<LossResult> {
    field.ensure_same_shape(image, "smoothed field vs image")?;
    if let Some(v) = field.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "smoothed field holds non-finite value {v}"
        )));
    }
    let (w, h) = field.dims();
    let mut grad = Grid::filled(w, h, 0.0);
    if w < 2 || h < 2 {
        let mut out = LossResult::new("smoothness", 0.0, 0);
        out.flags.empty = true;
        out.gradients.insert(GradTarget::Smoothed, grad);
        return Ok(out);
    }
    let gray = mean_intensity(image);
    let n = ((w - 1) * (h - 1)) as f64;
    let x = field.data();
    let ii = gray.data();
    let mut terms = Vec::with_capacity((w - 1) * (h - 1));
    for row in 0..h - 1 {
        for col in 0..w - 1 {
            let i = row * w + col;
            let right = i + 1;
            let down = i + w;
            let dx = x[right] - x[i];
            let dy = x[down] - x[i];
            let ex = (-(ii[right] - ii[i]).abs()).exp();
            let ey = (-(ii[down] - ii[i]).abs()).exp();
            terms.push(dx.abs() * ex + dy.abs() * ey);
            let gx = sign0(dx) * ex / n;
            let gy = sign0(dy) * ey / n;
            let g = grad.data_mut();
            g[right] += gx;
            g[down] += gy;
            g[i] -= gx + gy;
        }
    }
    let mut out = LossResult::new("smoothness", pairwise_sum(&terms) / n, terms.len());
    out.gradients.insert(GradTarget::Smoothed, grad);
    Ok(out)
}

/// Weights of the combined objective. `beta` weights the NLL term and also
/// acts as the Laplacian scale inside it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda_comb: f64,
    pub lambda_silog: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 0.1,
            gamma: 0.01,
            lambda_comb: 0.001,
            lambda_silog: DEFAULT_LAMBDA_SILOG,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda_comb", self.lambda_comb),
            ("lambda_silog", self.lambda_silog),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "weight {name} must be >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Everything the combined objective may consume. Self-supervised mode only
/// needs the RGB depth, confidence and warped thermal depth.
#[derive(Clone, Copy, Default)]
pub struct LossInputs<'a> {
    pub rgb_depth: Option<&'a DepthMap>,
    pub thermal_depth: Option<&'a DepthMap>,
    pub rgb_gt: Option<&'a DepthMap>,
    pub thermal_gt: Option<&'a DepthMap>,
    pub warped_thermal: Option<&'a DepthMap>,
    pub confidence: Option<&'a Grid<f64>>,
    pub similarity: Option<&'a MaskedGrid>,
    pub rgb_image: Option<&'a Image3>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CombinedOptions {
    pub nll: NllOptions,
    pub consistency: ConsistencyOptions,
}

fn require<'a, T>(v: Option<&'a T>, name: &str, mode: &str) -> Result<&'a T> {
    v.ok_or_else(|| Error::Config(format!("{mode} loss requires {name}")))
}

fn add_scaled(
    into: &mut BTreeMap<GradTarget, Grid<f64>>,
    key: GradTarget,
    grad: &Grid<f64>,
    scale: f64,
) {
    match into.get_mut(&key) {
        Some(acc) => {
            for (a, g) in acc.data_mut().iter_mut().zip(grad.iter()) {
                *a += scale * g;
            }
        }
        None => {
            into.insert(key, grad.map(|g| scale * g));
        }
    }
}

/// Supervised: `silog_r + silog_t + α·cons + β·nll + γ·sm(D̂_r) + λ·sm(Ŵ_r)`.
/// Self-supervised fine-tuning: `α·cons` only.
///
/// Gradients are merged per input: the RGB depth gets SILOG and smoothness,
/// the thermal depth SILOG, the warped thermal depth the consistency term and
/// the confidence the NLL and its smoothness.
pub fn combined_loss(
    inputs: &LossInputs<'_>,
    weights: &LossWeights,
    supervised: bool,
    options: &CombinedOptions,
) -> Result<LossResult> {
    weights.validate()?;
    let mode = if supervised {
        "supervised"
    } else {
        "self-supervised"
    };
    let d_r = require(inputs.rgb_depth, "the RGB depth", mode)?;
    let w = require(inputs.confidence, "the confidence map", mode)?;
    let d_tr = require(inputs.warped_thermal, "the warped thermal depth", mode)?;

    let cons = consistency(w, d_r, d_tr, inputs.similarity, &options.consistency)?;
    let mut out = LossResult::new("combined", 0.0, cons.num_pixels_kept);
    out.flags.empty = cons.flags.empty;
    out.components.insert("consistency", cons.value);
    add_scaled(
        &mut out.gradients,
        GradTarget::WarpedThermal,
        &cons.gradients[&GradTarget::WarpedThermal],
        weights.alpha,
    );

    if !supervised {
        out.value = weights.alpha * cons.value;
        return Ok(out);
    }

    let d_t = require(inputs.thermal_depth, "the thermal depth", mode)?;
    let gt_r = require(inputs.rgb_gt, "RGB ground truth", mode)?;
    let gt_t = require(inputs.thermal_gt, "thermal ground truth", mode)?;
    let image = require(inputs.rgb_image, "the RGB image", mode)?;

    let silog_r = silog(d_r, gt_r, weights.lambda_silog)?;
    let silog_t = silog(d_t, gt_t, weights.lambda_silog)?;
    let nll = laplacian_nll(w, d_r, gt_r, weights.beta, &options.nll)?;
    let sm_depth = smoothness(d_r.values(), image)?;
    let sm_conf = smoothness(w, image)?;

    out.value = silog_r.value
        + silog_t.value
        + weights.alpha * cons.value
        + weights.beta * nll.value
        + weights.gamma * sm_depth.value
        + weights.lambda_comb * sm_conf.value;
    out.flags.non_differentiable =
        silog_r.flags.non_differentiable || silog_t.flags.non_differentiable;
    out.components.insert("silog_rgb", silog_r.value);
    out.components.insert("silog_thermal", silog_t.value);
    out.components.insert("nll", nll.value);
    out.components.insert("smoothness_depth", sm_depth.value);
    out.components
        .insert("smoothness_confidence", sm_conf.value);

    let g = &mut out.gradients;
    add_scaled(
        g,
        GradTarget::PredRgb,
        &silog_r.gradients[&GradTarget::Pred],
        1.0,
    );
    add_scaled(
        g,
        GradTarget::PredRgb,
        &sm_depth.gradients[&GradTarget::Smoothed],
        weights.gamma,
    );
    add_scaled(
        g,
        GradTarget::PredThermal,
        &silog_t.gradients[&GradTarget::Pred],
        1.0,
    );
    add_scaled(
        g,
        GradTarget::Confidence,
        &nll.gradients[&GradTarget::Confidence],
        weights.beta,
    );
    add_scaled(
        g,
        GradTarget::Confidence,
        &sm_conf.gradients[&GradTarget::Smoothed],
        weights.lambda_comb,
    );
    Ok(out)
}
