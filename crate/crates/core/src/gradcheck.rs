//! Central finite-difference oracle for the analytic loss gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    warp_depth, warped_thermal_depth, CameraIntrinsics, RigidTransform, ThermalToRgbWarp,
};
use crate::grid::{DepthMap, Grid, Image3, Mask, MaskedGrid};
use crate::losses::{
    consistency, consistency_detailed, laplacian_nll, silog, smoothness, ConsistencyOptions,
    GradTarget, NllOptions, DEFAULT_LAMBDA_SILOG,
};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_REL_TOL: f64 = 1e-4;
pub const DEFAULT_ABS_FLOOR: f64 = 1e-6;
/// Thermal pixels projecting this close to the RGB image border are skipped
/// by the warp-chain check, since a perturbation may flip their validity.
pub const BORDER_MARGIN_PX: f64 = 1e-3;

/// Per-entry step `h·max(1, |x|)`.
pub fn step_for(x: f64, h: f64) -> f64 {
    h * x.abs().max(1.0)
}

/// Central differences of `f` at every entry of `x`. Entries where `f` fails
/// on a perturbed input are NaN.
pub fn finite_diff<F>(f: F, x: &Grid<f64>, h: f64) -> Result<Grid<f64>>
where
    F: Fn(&Grid<f64>) -> Result<f64> + Sync,
{
    finite_diff_masked(f, x, h, &Grid::filled(x.width(), x.height(), true))
}

/// [`finite_diff`] restricted to entries set in `probe`; the others are NaN.
pub fn finite_diff_masked<F>(f: F, x: &Grid<f64>, h: f64, probe: &Mask) -> Result<Grid<f64>>
where
    F: Fn(&Grid<f64>) -> Result<f64> + Sync,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    x.ensure_same_shape(probe, "probe mask")?;
    let out: Vec<f64> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            if !probe.data()[i] {
                return f64::NAN;
            }
            let hi = step_for(x.data()[i], h);
            let mut xp = x.clone();
            xp.data_mut()[i] += hi;
            let mut xm = x.clone();
            xm.data_mut()[i] -= hi;
            match (f(&xp), f(&xm)) {
                (Ok(a), Ok(b)) => (a - b) / (2.0 * hi),
                _ => f64::NAN,
            }
        })
        .collect();
    Grid::from_vec(x.width(), x.height(), out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorstPixel {
    pub row: usize,
    pub col: usize,
    pub input: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub input: String,
    pub max_rel_error: f64,
    pub worst_pixel: Option<WorstPixel>,
    pub num_checked: usize,
    pub num_skipped_kinks: usize,
    /// Entries whose finite difference could not be evaluated.
    pub num_unavailable: usize,
    pub rel_tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    /// Folds another report for the same input into this one.
    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_error > self.max_rel_error || self.worst_pixel.is_none() {
            self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
            self.worst_pixel = other.worst_pixel.clone().or(self.worst_pixel.take());
        }
        self.num_checked += other.num_checked;
        self.num_skipped_kinks += other.num_skipped_kinks;
        self.num_unavailable += other.num_unavailable;
        self.passed = self.passed && other.passed;
    }
}

/// Compares every entry; see [`compare_excluding`].
pub fn compare(
    analytic: &Grid<f64>,
    numeric: &Grid<f64>,
    rel_tol: f64,
    abs_floor: f64,
) -> Result<GradCheckReport> {
    compare_excluding(analytic, numeric, None, rel_tol, abs_floor, "x")
}

/// Relative error `|a − n| / max(floor, |a|, |n|)` over entries not in
/// `skip`. NaN numeric entries count as unavailable.
pub fn compare_excluding(
    analytic: &Grid<f64>,
    numeric: &Grid<f64>,
    skip: Option<&Mask>,
    rel_tol: f64,
    abs_floor: f64,
    input: &str,
) -> Result<GradCheckReport> {
    analytic.ensure_same_shape(numeric, "analytic vs numeric gradient")?;
    if let Some(s) = skip {
        analytic.ensure_same_shape(s, "skip mask")?;
    }
    let mut report = GradCheckReport {
        input: input.to_string(),
        max_rel_error: 0.0,
        worst_pixel: None,
        num_checked: 0,
        num_skipped_kinks: 0,
        num_unavailable: 0,
        rel_tol,
        passed: true,
    };
    for i in 0..analytic.len() {
        if skip.is_some_and(|s| s.data()[i]) {
            report.num_skipped_kinks += 1;
            continue;
        }
        let a = analytic.data()[i];
        let n = numeric.data()[i];
        if n.is_nan() {
            report.num_unavailable += 1;
            continue;
        }
        report.num_checked += 1;
        let err = (a - n).abs() / abs_floor.max(a.abs()).max(n.abs());
        if err > report.max_rel_error || report.worst_pixel.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            let (col, row) = analytic.coords_of(i);
            report.worst_pixel = Some(WorstPixel {
                row,
                col,
                input: input.to_string(),
            });
        }
    }
    report.passed = !(report.max_rel_error > rel_tol);
    Ok(report)
}

/// The gradients exercised by [`run_suite`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckTarget {
    SilogPred,
    SmoothnessField,
    NllConfidence,
    ConsistencyWarped,
    ConsistencyThermalChain,
}

impl CheckTarget {
    pub const ALL: [CheckTarget; 5] = [
        CheckTarget::SilogPred,
        CheckTarget::SmoothnessField,
        CheckTarget::NllConfidence,
        CheckTarget::ConsistencyWarped,
        CheckTarget::ConsistencyThermalChain,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            CheckTarget::SilogPred => "silog/pred",
            CheckTarget::SmoothnessField => "smoothness/field",
            CheckTarget::NllConfidence => "laplacian_nll/confidence",
            CheckTarget::ConsistencyWarped => "consistency/warped_thermal",
            CheckTarget::ConsistencyThermalChain => "consistency/pred_thermal",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub seed: u64,
    pub instances: usize,
    pub size: usize,
    pub step: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
    /// Scales one analytic gradient by `1 + fault_scale` to prove the harness
    /// catches errors.
    pub inject_fault: Option<CheckTarget>,
    pub fault_scale: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 20,
            size: 16,
            step: DEFAULT_STEP,
            rel_tol: DEFAULT_REL_TOL,
            abs_floor: DEFAULT_ABS_FLOOR,
            inject_fault: None,
            fault_scale: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub instances: usize,
    pub size: usize,
    pub checks: Vec<GradCheckReport>,
    pub passed: bool,
}

struct Instance {
    rng: ChaCha8Rng,
    size: usize,
}

impl Instance {
    fn uniform(&mut self, lo: f64, hi: f64) -> Grid<f64> {
        Grid::from_fn(self.size, self.size, |_, _| self.rng.random_range(lo..hi))
    }

    fn mask(&mut self, p_valid: f64) -> Mask {
        Grid::from_fn(self.size, self.size, |_, _| self.rng.random_bool(p_valid))
    }

    fn image(&mut self) -> Image3 {
        Grid::from_fn(self.size, self.size, |_, _| {
            [
                self.rng.random_range(0.0..1.0),
                self.rng.random_range(0.0..1.0),
                self.rng.random_range(0.0..1.0),
            ]
        })
    }
}

fn mask_from(w: usize, h: usize, mut f: impl FnMut(usize) -> bool) -> Mask {
    Grid::from_fn(w, h, |x, y| f(y * w + x))
}

fn maybe_fault(mut g: Grid<f64>, target: CheckTarget, cfg: &SuiteConfig) -> Grid<f64> {
    if cfg.inject_fault == Some(target) {
        for v in g.data_mut() {
            *v *= 1.0 + cfg.fault_scale;
        }
    }
    g
}

fn check_silog(inst: &mut Instance, cfg: &SuiteConfig) -> Result<GradCheckReport> {
    let pred = inst.uniform(1.0, 10.0);
    let gt_vals = inst.uniform(1.0, 10.0);
    let gt_mask = inst.mask(0.9);
    let gt = DepthMap::new(gt_vals, gt_mask)?;
    let t = CheckTarget::SilogPred;
    let res = silog(
        &DepthMap::from_values(pred.clone()),
        &gt,
        DEFAULT_LAMBDA_SILOG,
    )?;
    let analytic = maybe_fault(res.gradients[&GradTarget::Pred].clone(), t, cfg);
    let numeric = finite_diff(
        |x| Ok(silog(&DepthMap::from_values(x.clone()), &gt, DEFAULT_LAMBDA_SILOG)?.value),
        &pred,
        cfg.step,
    )?;
    compare_excluding(
        &analytic,
        &numeric,
        None,
        cfg.rel_tol,
        cfg.abs_floor,
        t.label(),
    )
}

fn check_smoothness(inst: &mut Instance, cfg: &SuiteConfig) -> Result<GradCheckReport> {
    let field = inst.uniform(1.0, 10.0);
    let image = inst.image();
    let t = CheckTarget::SmoothnessField;
    let res = smoothness(&field, &image)?;
    let analytic = maybe_fault(res.gradients[&GradTarget::Smoothed].clone(), t, cfg);
    let numeric = finite_diff(|x| Ok(smoothness(x, &image)?.value), &field, cfg.step)?;
    // Skip pixels taking part in a near-zero forward difference.
    let (w, h) = field.dims();
    let mut skip = Grid::filled(w, h, false);
    let v = field.data();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let near = |j: usize| {
                (v[j] - v[i]).abs() < 10.0 * step_for(v[i], cfg.step).max(step_for(v[j], cfg.step))
            };
            if (x + 1 < w && near(i + 1)) || (y + 1 < h && near(i + w)) {
                skip.data_mut()[i] = true;
                if x + 1 < w && near(i + 1) {
                    skip.data_mut()[i + 1] = true;
                }
                if y + 1 < h && near(i + w) {
                    skip.data_mut()[i + w] = true;
                }
            }
        }
    }
    compare_excluding(
        &analytic,
        &numeric,
        Some(&skip),
        cfg.rel_tol,
        cfg.abs_floor,
        t.label(),
    )
}

fn check_nll(inst: &mut Instance, cfg: &SuiteConfig) -> Result<GradCheckReport> {
    let conf = inst.uniform(0.05, 0.95);
    let pred = DepthMap::from_values(inst.uniform(1.0, 10.0));
    let gt = DepthMap::new(inst.uniform(1.0, 10.0), inst.mask(0.9))?;
    let opts = NllOptions::default();
    let beta = 0.1;
    let t = CheckTarget::NllConfidence;
    let res = laplacian_nll(&conf, &pred, &gt, beta, &opts)?;
    let analytic = maybe_fault(res.gradients[&GradTarget::Confidence].clone(), t, cfg);
    let numeric = finite_diff(
        |x| Ok(laplacian_nll(x, &pred, &gt, beta, &opts)?.value),
        &conf,
        cfg.step,
    )?;
    compare_excluding(
        &analytic,
        &numeric,
        None,
        cfg.rel_tol,
        cfg.abs_floor,
        t.label(),
    )
}

fn consistency_kinks(
    residual: &Grid<f64>,
    kept_or_valid: &Mask,
    threshold: Option<f64>,
    margin: &Grid<f64>,
) -> Mask {
    let (w, h) = residual.dims();
    mask_from(w, h, |i| {
        if !kept_or_valid.data()[i] {
            return false;
        }
        let r = residual.data()[i];
        let m = margin.data()[i];
        r < m || threshold.is_some_and(|q| (r - q).abs() < m)
    })
}

fn check_consistency(inst: &mut Instance, cfg: &SuiteConfig) -> Result<GradCheckReport> {
    let conf = inst.uniform(0.05, 1.0);
    let d_r = DepthMap::new(inst.uniform(1.0, 10.0), inst.mask(0.95))?;
    let d_tr_vals = inst.uniform(1.0, 10.0);
    let d_tr_mask = inst.mask(0.9);
    let sim = MaskedGrid::new(inst.uniform(-1.0, 1.0), inst.mask(0.95))?;
    let opts = ConsistencyOptions::default();
    let t = CheckTarget::ConsistencyWarped;
    let d_tr = DepthMap::new(d_tr_vals.clone(), d_tr_mask.clone())?;
    let eval = consistency_detailed(&conf, &d_r, &d_tr, Some(&sim), &opts)?;
    let analytic = maybe_fault(
        eval.result.gradients[&GradTarget::WarpedThermal].clone(),
        t,
        cfg,
    );
    let f = |x: &Grid<f64>| {
        let d = DepthMap::new(x.clone(), d_tr_mask.clone())?;
        Ok(consistency(&conf, &d_r, &d, Some(&sim), &opts)?.value)
    };
    let numeric = finite_diff(f, &d_tr_vals, cfg.step)?;
    let valid = d_r.valid().and(d_tr.valid());
    let margin = d_tr_vals.map(|&v| 10.0 * step_for(v, cfg.step));
    let skip = consistency_kinks(&eval.residual, &valid, eval.trim_threshold, &margin);
    compare_excluding(
        &analytic,
        &numeric,
        Some(&skip),
        cfg.rel_tol,
        cfg.abs_floor,
        t.label(),
    )
}

fn check_chain(inst: &mut Instance, cfg: &SuiteConfig) -> Result<GradCheckReport> {
    let n = inst.size;
    let c = (n as f64 - 1.0) / 2.0;
    let k_r = CameraIntrinsics::new(1.2 * n as f64, 1.2 * n as f64, c, c, n, n)?;
    let k_t = CameraIntrinsics::new(1.1 * n as f64, 1.1 * n as f64, c + 0.3, c - 0.2, n, n)?;
    let aa = nalgebra::Vector3::new(
        inst.rng.random_range(-0.03..0.03),
        inst.rng.random_range(-0.03..0.03),
        inst.rng.random_range(-0.03..0.03),
    );
    let t_t_r = RigidTransform::from_axis_angle(aa, nalgebra::Vector3::new(-0.2, 0.01, 0.02));
    let t_r_t = t_t_r.inverse();

    let d_r = DepthMap::from_values(inst.uniform(4.0, 6.0));
    let d_t_vals = inst.uniform(4.0, 6.0);
    let conf = inst.uniform(0.05, 1.0);
    let sim = MaskedGrid::all_valid(inst.uniform(-1.0, 1.0));
    let opts = ConsistencyOptions::default();
    let t = CheckTarget::ConsistencyThermalChain;

    let u_rt = warp_depth(&d_r, &k_r, &k_t, &t_t_r)?.coords;
    let d_t = DepthMap::from_values(d_t_vals.clone());
    let chain = ThermalToRgbWarp::new(&u_rt, &k_t, &k_r, &t_r_t)?;
    let warped = warped_thermal_depth(&d_t, &u_rt, &k_t, &k_r, &t_r_t)?;
    let eval = consistency_detailed(&conf, &d_r, &warped, Some(&sim), &opts)?;
    let grad_rgb = &eval.result.gradients[&GradTarget::WarpedThermal];
    let analytic = maybe_fault(chain.pullback(grad_rgb, &warped)?, t, cfg);

    let f = |x: &Grid<f64>| {
        let d = DepthMap::from_values(x.clone());
        let w = warped_thermal_depth(&d, &u_rt, &k_t, &k_r, &t_r_t)?;
        Ok(consistency(&conf, &d_r, &w, Some(&sim), &opts)?.value)
    };
    let numeric = finite_diff(f, &d_t_vals, cfg.step)?;

    // RGB-side kinks, using the largest induced change of D̆_tr as margin.
    let coeff = chain.depth_coefficients();
    let max_step = d_t_vals
        .iter()
        .zip(coeff.iter())
        .map(|(&v, &a)| step_for(v, cfg.step) * a.abs().max(1.0))
        .fold(0.0, f64::max);
    let margin = Grid::filled(n, n, 10.0 * max_step);
    let valid = d_r.valid().and(warped.valid());
    let rgb_kinks = consistency_kinks(&eval.residual, &valid, eval.trim_threshold, &margin);
    let mut skip = Grid::filled(n, n, false);
    for (j, taps) in chain.taps().iter().enumerate() {
        if let (true, Some(taps)) = (rgb_kinks.data()[j], taps) {
            for (k, _) in taps.iter() {
                skip.data_mut()[k] = true;
            }
        }
    }
    // Thermal pixels whose projection into the RGB image sits on the border.
    let fwd = warp_depth(&d_t, &k_t, &k_r, &t_r_t)?.coords;
    let (wr, hr) = (k_r.width as f64 - 1.0, k_r.height as f64 - 1.0);
    for i in 0..skip.len() {
        let (x, y) = (fwd.x.data()[i], fwd.y.data()[i]);
        if x.is_finite() && y.is_finite() {
            let dist = [x, wr - x, y, hr - y]
                .into_iter()
                .map(f64::abs)
                .fold(f64::INFINITY, f64::min);
            if dist < BORDER_MARGIN_PX {
                skip.data_mut()[i] = true;
            }
        }
    }
    compare_excluding(
        &analytic,
        &numeric,
        Some(&skip),
        cfg.rel_tol,
        cfg.abs_floor,
        t.label(),
    )
}

/// Runs every gradient check over `instances` random `size × size` inputs.
/// Instance `i` draws from a ChaCha8 stream seeded with `seed + i`.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    if cfg.instances == 0 || cfg.size < 2 {
        return Err(Error::Config(
            "gradcheck needs at least one instance of size >= 2".into(),
        ));
    }
    if !(cfg.step > 0.0 && cfg.rel_tol > 0.0 && cfg.abs_floor > 0.0) {
        return Err(Error::Config(
            "step, rel_tol and abs_floor must be positive".into(),
        ));
    }
    let mut merged: Vec<Option<GradCheckReport>> = vec![None; CheckTarget::ALL.len()];
    for i in 0..cfg.instances {
        let mut inst = Instance {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64)),
            size: cfg.size,
        };
        for (slot, target) in merged.iter_mut().zip(CheckTarget::ALL) {
            let report = match target {
                CheckTarget::SilogPred => check_silog(&mut inst, cfg)?,
                CheckTarget::SmoothnessField => check_smoothness(&mut inst, cfg)?,
                CheckTarget::NllConfidence => check_nll(&mut inst, cfg)?,
                CheckTarget::ConsistencyWarped => check_consistency(&mut inst, cfg)?,
                CheckTarget::ConsistencyThermalChain => check_chain(&mut inst, cfg)?,
            };
            match slot {
                Some(acc) => acc.merge(&report),
                None => *slot = Some(report),
            }
        }
    }
    let checks: Vec<GradCheckReport> = merged.into_iter().flatten().collect();
    let passed = checks.iter().all(|c| c.passed && c.num_checked > 0);
    Ok(SuiteReport {
        seed: cfg.seed,
        instances: cfg.instances,
        size: cfg.size,
        checks,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn row(v: &[f64]) -> Grid<f64> {
        Grid::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn quadratic_is_exact() {
        let x = row(&[1.0, 2.0, 3.0]);
        let g = finite_diff(|x| Ok(x.iter().map(|v| v * v).sum()), &x, 1e-6).unwrap();
        for (gi, want) in g.iter().zip([2.0, 4.0, 6.0]) {
            assert_abs_diff_eq!(*gi, want, epsilon = 1e-6);
        }
    }

    #[test]
    fn quadratic_probe_with_cross_terms() {
        let x = row(&[0.3, -1.7, 4.0]);
        let f = |x: &Grid<f64>| {
            let v = x.data();
            Ok(3.0 * v[0] * v[1] - v[2] * v[2] + 2.0 * v[0])
        };
        let g = finite_diff(f, &x, 1e-5).unwrap();
        assert_abs_diff_eq!(g.data()[0], 3.0 * -1.7 + 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(g.data()[1], 3.0 * 0.3, epsilon = 1e-8);
        assert_abs_diff_eq!(g.data()[2], -8.0, epsilon = 1e-8);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = finite_diff(|_| Ok(4.2), &row(&[1.0, 5.0]), 1e-5).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn failing_probe_is_unavailable() {
        let f = |x: &Grid<f64>| {
            if x.data()[0] > 1.0 {
                Err(Error::Domain("boom".into()))
            } else {
                Ok(x.data()[1])
            }
        };
        let g = finite_diff(f, &row(&[1.0, 2.0]), 1e-5).unwrap();
        assert!(g.data()[0].is_nan());
        let r = compare(&row(&[0.0, 0.0]), &g, 1e-4, 1e-8).unwrap();
        assert_eq!(r.num_unavailable, 1);
        assert_eq!(r.num_checked, 1);
    }

    #[test]
    fn compare_examples() {
        let a = row(&[1.0, 2.0]);
        assert_eq!(compare(&a, &a, 1e-4, 1e-8).unwrap().max_rel_error, 0.0);
        let r = compare(&row(&[1.0]), &row(&[1.00001]), 1e-4, 1e-8).unwrap();
        assert_abs_diff_eq!(r.max_rel_error, 1e-5 / 1.00001, epsilon = 1e-12);
        let r = compare(&row(&[0.0]), &row(&[1e-12]), 1e-4, 1e-8).unwrap();
        assert_abs_diff_eq!(r.max_rel_error, 1e-4, epsilon = 1e-15);
        assert!(compare(&row(&[0.0]), &row(&[1.0, 2.0]), 1e-4, 1e-8).is_err());
    }

    #[test]
    fn compare_reports_worst_location() {
        let a = Grid::from_vec(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let n = Grid::from_vec(2, 2, vec![1.0, 1.0, 1.1, 1.0]).unwrap();
        let r = compare(&a, &n, 1e-4, 1e-8).unwrap();
        let w = r.worst_pixel.unwrap();
        assert_eq!((w.row, w.col), (1, 0));
        assert!(!r.passed);
        assert_eq!(r.num_checked + r.num_skipped_kinks, 4);
    }

    #[test]
    fn silog_small_instance_matches() {
        let pred = Grid::from_fn(4, 4, |x, y| 1.0 + 0.3 * x as f64 + 0.7 * y as f64);
        let gt = DepthMap::from_values(Grid::from_fn(4, 4, |x, y| 2.0 + 0.1 * (x * y) as f64));
        let res = silog(&DepthMap::from_values(pred.clone()), &gt, 0.15).unwrap();
        let num = finite_diff(
            |x| Ok(silog(&DepthMap::from_values(x.clone()), &gt, 0.15)?.value),
            &pred,
            1e-5,
        )
        .unwrap();
        let r = compare(&res.gradients[&GradTarget::Pred], &num, 1e-5, 1e-8).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn short_suite_passes_and_fault_is_caught() {
        let cfg = SuiteConfig {
            instances: 2,
            size: 8,
            ..Default::default()
        };
        let rep = run_suite(&cfg).unwrap();
        assert!(rep.passed, "{rep:#?}");
        let bad = SuiteConfig {
            inject_fault: Some(CheckTarget::ConsistencyThermalChain),
            ..cfg
        };
        let rep = run_suite(&bad).unwrap();
        assert!(!rep.passed);
        let failing: Vec<_> = rep
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.input.as_str())
            .collect();
        assert_eq!(failing, vec!["consistency/pred_thermal"]);
    }
}
