//! Depth evaluation metrics, plain and averaged over ground-truth depth bins.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Mask};
use crate::numeric::pairwise_sum;

pub const DEFAULT_BIN_WIDTH: f64 = 5.0;
pub const DEFAULT_MAX_DEPTH: f64 = 80.0;
pub const DELTA_BASE: f64 = 1.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub num_pixels: usize,
}

impl MetricSet {
    /// Metrics over explicit `(pred, gt)` pairs, all positive.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty(
                "metrics need at least one evaluated pixel".into(),
            ));
        }
        if let Some(&(p, g)) = pairs
            .iter()
            .find(|(p, g)| !(*p > 0.0 && *g > 0.0 && p.is_finite() && g.is_finite()))
        {
            return Err(Error::Domain(format!(
                "metrics need positive depths, got pred {p}, gt {g}"
            )));
        }
        let n = pairs.len() as f64;
        let mean = |f: &dyn Fn(f64, f64) -> f64| {
            pairwise_sum(&pairs.iter().map(|&(p, g)| f(p, g)).collect::<Vec<_>>()) / n
        };
        let ratio = |p: f64, g: f64| (p / g).max(g / p);
        Ok(Self {
            abs_rel: mean(&|p, g| (p - g).abs() / g),
            sq_rel: mean(&|p, g| (p - g) * (p - g) / g),
            rmse: mean(&|p, g| (p - g) * (p - g)).sqrt(),
            rmse_log: mean(&|p, g| (p.ln() - g.ln()).powi(2)).sqrt(),
            delta1: mean(&|p, g| f64::from(u8::from(ratio(p, g) < DELTA_BASE))),
            delta2: mean(&|p, g| f64::from(u8::from(ratio(p, g) < DELTA_BASE * DELTA_BASE))),
            delta3: mean(&|p, g| {
                f64::from(u8::from(ratio(p, g) < DELTA_BASE * DELTA_BASE * DELTA_BASE))
            }),
            num_pixels: pairs.len(),
        })
    }

    /// Values in CSV column order.
    pub fn columns(&self) -> [f64; 7] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.delta1,
            self.delta2,
            self.delta3,
        ]
    }
}

fn evaluated_pairs(pred: &DepthMap, gt: &DepthMap, mask: Option<&Mask>) -> Result<Vec<(f64, f64)>> {
    pred.values()
        .ensure_same_shape(gt.values(), "prediction vs ground truth")?;
    if let Some(m) = mask {
        m.ensure_same_shape(gt.values(), "evaluation mask")?;
    }
    let p = pred.values().data();
    let g = gt.values().data();
    Ok((0..g.len())
        .filter(|&i| {
            pred.valid().data()[i] && gt.valid().data()[i] && mask.is_none_or(|m| m.data()[i])
        })
        .map(|i| (p[i], g[i]))
        .collect())
}

/// Metrics over pixels valid in both maps and in `mask`.
pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap, mask: Option<&Mask>) -> Result<MetricSet> {
    MetricSet::from_pairs(&evaluated_pairs(pred, gt, mask)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthBin {
    pub lower: f64,
    pub upper: f64,
    /// `None` for bins without pixels.
    pub metrics: Option<MetricSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedMetricSet {
    pub bins: Vec<DepthBin>,
    /// Unweighted mean over non-empty bins; `num_pixels` is the total binned.
    pub aggregate: MetricSet,
}

/// Metrics per ground-truth depth bin `[k·w, (k+1)·w)` below `max_depth`,
/// averaged with equal weight over the non-empty bins.
pub fn compute_weighted_metrics(
    pred: &DepthMap,
    gt: &DepthMap,
    mask: Option<&Mask>,
    bin_width: f64,
    max_depth: f64,
) -> Result<BinnedMetricSet> {
    if !(bin_width > 0.0 && max_depth > 0.0 && bin_width.is_finite() && max_depth.is_finite()) {
        return Err(Error::Config(format!(
            "bin width ({bin_width}) and max depth ({max_depth}) must be positive"
        )));
    }
    let num_bins = (max_depth / bin_width).ceil() as usize;
    let mut per_bin: Vec<Vec<(f64, f64)>> = vec![Vec::new(); num_bins];
    for (p, g) in evaluated_pairs(pred, gt, mask)? {
        if g >= max_depth {
            continue;
        }
        let k = ((g / bin_width).floor() as usize).min(num_bins - 1);
        per_bin[k].push((p, g));
    }
    let mut bins = Vec::with_capacity(num_bins);
    let mut filled = Vec::new();
    for (k, pairs) in per_bin.iter().enumerate() {
        let metrics = if pairs.is_empty() {
            None
        } else {
            Some(MetricSet::from_pairs(pairs)?)
        };
        if let Some(m) = metrics {
            filled.push(m);
        }
        bins.push(DepthBin {
            lower: k as f64 * bin_width,
            upper: ((k + 1) as f64 * bin_width).min(max_depth),
            metrics,
        });
    }
    if filled.is_empty() {
        return Err(Error::Empty(
            "no evaluated pixel falls in any depth bin".into(),
        ));
    }
    let nb = filled.len() as f64;
    let avg =
        |f: fn(&MetricSet) -> f64| pairwise_sum(&filled.iter().map(f).collect::<Vec<_>>()) / nb;
    let aggregate = MetricSet {
        abs_rel: avg(|m| m.abs_rel),
        sq_rel: avg(|m| m.sq_rel),
        rmse: avg(|m| m.rmse),
        rmse_log: avg(|m| m.rmse_log),
        delta1: avg(|m| m.delta1),
        delta2: avg(|m| m.delta2),
        delta3: avg(|m| m.delta3),
        num_pixels: filled.iter().map(|m| m.num_pixels).sum(),
    };
    Ok(BinnedMetricSet { bins, aggregate })
}

/// One CSV row: a metric variant (e.g. "standard" or "weighted") of a method
/// on a split.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub split: String,
    pub method: String,
    pub variant: String,
    pub metrics: MetricSet,
}

pub const CSV_HEADER: [&str; 10] = [
    "split", "method", "variant", "AbsRel", "SqRel", "RMSE", "RMSElog", "d1", "d2", "d3",
];

pub fn write_metrics_csv(writer: impl Write, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Format(format!("CSV write failed: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.split.clone(), r.method.clone(), r.variant.clone()];
        rec.extend(r.metrics.columns().iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
