//! Per-pixel confidence for the distillation demo. The learned confidence
//! network is replaced by the closed-form minimizer of the Laplacian NLL or by
//! per-pixel free parameters fitted to it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Grid};
use crate::losses::{laplacian_nll, NllOptions, CONFIDENCE_MAX, CONFIDENCE_MIN};
use crate::numeric::{log_sigmoid, logit, sigmoid};

/// Residuals below this are treated as this value by [`oracle_confidence`].
pub const MIN_RESIDUAL: f64 = 1e-9;

/// Closed-form NLL minimizer `clamp(β / |r|)`. Non-finite residuals (pixels
/// without a reference) get the upper bound.
pub fn oracle_confidence(residual: &Grid<f64>, beta: f64) -> Result<Grid<f64>> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta must be positive, got {beta}")));
    }
    if let Some(r) = residual.iter().find(|r| **r < 0.0) {
        return Err(Error::Domain(format!(
            "residual magnitude must be >= 0, got {r}"
        )));
    }
    Ok(residual.map(|&r| {
        if r.is_finite() {
            (beta / r.max(MIN_RESIDUAL)).clamp(CONFIDENCE_MIN, CONFIDENCE_MAX)
        } else {
            CONFIDENCE_MAX
        }
    }))
}

fn abs_residual(pred: &DepthMap, gt: &DepthMap) -> Result<Grid<f64>> {
    pred.values()
        .ensure_same_shape(gt.values(), "prediction vs reference")?;
    Ok(Grid::from_fn(gt.width(), gt.height(), |x, y| {
        match (pred.depth(x, y), gt.depth(x, y)) {
            (Some(p), Some(g)) => (p - g).abs(),
            _ => f64::NAN,
        }
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub steps: usize,
    /// Initial logit-space step size; adapted per pixel afterwards.
    pub step_size: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            steps: 2000,
            step_size: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub confidence: Grid<f64>,
    pub initial_nll: f64,
    pub final_nll: f64,
}

const STEP_GROW: f64 = 1.2;
const STEP_SHRINK: f64 = 0.5;

/// Minimizes `W·|r| − β ln W` per pixel by gradient descent on `z = logit W`,
/// starting at `W = 0.5`.
///
/// Each pixel adapts its own step: a step that does not increase the loss is
/// accepted and the step grows by 1.2, otherwise it is rejected and halved.
/// `z` is kept within the logits of the confidence clamp bounds. Pixels
/// without a valid pair keep `W = 0.5`.
pub fn fit_confidence(
    pred: &DepthMap,
    gt: &DepthMap,
    beta: f64,
    options: &FitOptions,
) -> Result<FitResult> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta must be positive, got {beta}")));
    }
    if !(options.step_size > 0.0 && options.step_size.is_finite()) {
        return Err(Error::Config(format!(
            "step size must be positive, got {}",
            options.step_size
        )));
    }
    let residual = abs_residual(pred, gt)?;
    let (z_lo, z_hi) = (logit(CONFIDENCE_MIN), logit(CONFIDENCE_MAX));
    let loss = |z: f64, r: f64| r * sigmoid(z) - beta * log_sigmoid(z);
    let nll_opts = NllOptions {
        keep_fraction: 1.0,
        ..Default::default()
    };
    let start = Grid::filled(gt.width(), gt.height(), 0.5);
    let initial_nll = laplacian_nll(&start, pred, gt, beta, &nll_opts)?.value;

    let mut out = start;
    for (i, (&r, w_out)) in residual.iter().zip(out.data_mut()).enumerate() {
        if !r.is_finite() {
            continue;
        }
        let mut z = 0.0;
        let mut eta = options.step_size;
        let mut f = loss(z, r);
        for step in 0..options.steps {
            let w = sigmoid(z);
            let g = (1.0 - w) * (r * w - beta);
            if g == 0.0 {
                break;
            }
            let z_new = (z - eta * g).clamp(z_lo, z_hi);
            let f_new = loss(z_new, r);
            if !f_new.is_finite() {
                let (x, y) = residual.coords_of(i);
                return Err(Error::Diverged {
                    step,
                    trace: format!(
                        "pixel ({x}, {y}): |r| = {r}, z = {z}, step = {eta}, loss = {f_new}"
                    ),
                });
            }
            if f_new <= f {
                if z_new == z {
                    break;
                }
                z = z_new;
                f = f_new;
                eta *= STEP_GROW;
            } else {
                eta *= STEP_SHRINK;
            }
        }
        *w_out = sigmoid(z).clamp(CONFIDENCE_MIN, CONFIDENCE_MAX);
    }
    let final_nll = laplacian_nll(&out, pred, gt, beta, &nll_opts)?.value;
    Ok(FitResult {
        confidence: out,
        initial_nll,
        final_nll,
    })
}

/// Source of the confidence map weighting the distillation loss.
pub trait ConfidenceProvider {
    fn name(&self) -> &'static str;

    /// Confidence of `teacher` given the `reference` depth it should match.
    fn confidence(&self, teacher: &DepthMap, reference: &DepthMap, beta: f64) -> Result<Grid<f64>>;
}

pub struct OracleConfidence;

impl ConfidenceProvider for OracleConfidence {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn confidence(&self, teacher: &DepthMap, reference: &DepthMap, beta: f64) -> Result<Grid<f64>> {
        oracle_confidence(&abs_residual(teacher, reference)?, beta)
    }
}

pub struct FittedConfidence(pub FitOptions);

impl ConfidenceProvider for FittedConfidence {
    fn name(&self) -> &'static str {
        "fitted"
    }

    fn confidence(&self, teacher: &DepthMap, reference: &DepthMap, beta: f64) -> Result<Grid<f64>> {
        Ok(fit_confidence(teacher, reference, beta, &self.0)?.confidence)
    }
}

/// `W ≡ 1`: plain L1 distillation.
pub struct UniformConfidence;

impl ConfidenceProvider for UniformConfidence {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn confidence(
        &self,
        teacher: &DepthMap,
        _reference: &DepthMap,
        _beta: f64,
    ) -> Result<Grid<f64>> {
        Ok(Grid::filled(teacher.width(), teacher.height(), 1.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceMode {
    Oracle,
    Fitted,
    Uniform,
}

impl ConfidenceMode {
    pub fn provider(&self, fit: FitOptions) -> Box<dyn ConfidenceProvider> {
        match self {
            ConfidenceMode::Oracle => Box::new(OracleConfidence),
            ConfidenceMode::Fitted => Box::new(FittedConfidence(fit)),
            ConfidenceMode::Uniform => Box::new(UniformConfidence),
        }
    }
}
