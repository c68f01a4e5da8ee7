//! Toy RGB→thermal distillation: a corrupted RGB teacher supervises a
//! per-pixel thermal student through the warp chain, with and without
//! confidence weighting.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::confidence::{ConfidenceMode, ConfidenceProvider, FitOptions, UniformConfidence};
use super::corruption::{corrupt_depth, CorruptionConfig, MIN_CORRUPTED_DEPTH};
use super::{render_depth, Scene};
use crate::error::{Error, Result};
use crate::geometry::{
    warp_depth, warped_thermal_depth, CameraIntrinsics, CameraRig, RigidTransform, ThermalToRgbWarp,
};
use crate::grid::{DepthMap, Grid, Mask};
use crate::losses::{
    combined_loss, CombinedOptions, ConsistencyOptions, GradTarget, LossInputs, LossWeights,
    Normalizer,
};
use crate::metrics::compute_metrics;

/// Total bilinear weight a thermal pixel must receive to enter the AbsRel
/// evaluation.
pub const MIN_SUPERVISION_WEIGHT: f64 = 0.5;

/// 64×48 RGB and thermal cameras, 0.2 m apart along x with a small rotation.
pub fn default_rig() -> CameraRig {
    CameraRig {
        rgb: CameraIntrinsics {
            fx: 60.0,
            fy: 60.0,
            cx: 31.5,
            cy: 23.5,
            width: 64,
            height: 48,
        },
        thermal: CameraIntrinsics {
            fx: 56.0,
            fy: 56.0,
            cx: 32.2,
            cy: 23.1,
            width: 64,
            height: 48,
        },
        t_thermal_rgb: RigidTransform::from_axis_angle(
            Vector3::new(0.004, -0.01, 0.002),
            Vector3::new(-0.2, 0.01, 0.0),
        ),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub seed: u64,
    pub rig: CameraRig,
    pub scene: Scene,
    pub corruption: CorruptionConfig,
    pub confidence_mode: ConfidenceMode,
    pub fit: FitOptions,
    pub beta: f64,
    pub alpha: f64,
    pub keep_fraction: f64,
    pub normalizer: Normalizer,
    /// Student initialization as a multiple of the thermal ground truth.
    pub init_scale: f64,
    pub steps: usize,
    pub step_size: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            rig: default_rig(),
            scene: Scene::default_room(),
            corruption: CorruptionConfig::default(),
            confidence_mode: ConfidenceMode::Fitted,
            fit: FitOptions::default(),
            beta: 0.1,
            alpha: 0.2,
            keep_fraction: 0.8,
            normalizer: Normalizer::KeptPixels,
            init_scale: 1.05,
            steps: 400,
            step_size: 25.0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        self.rig.validate()?;
        self.corruption
            .validate(self.rig.rgb.width, self.rig.rgb.height)?;
        let positive = [
            ("beta", self.beta),
            ("alpha", self.alpha),
            ("init_scale", self.init_scale),
            ("step_size", self.step_size),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "keep_fraction must lie in (0, 1], got {}",
                self.keep_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub confidence: String,
    pub absrel_final: f64,
    /// Objective value before each update.
    pub loss_curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub seed: u64,
    pub num_supervised_pixels: usize,
    pub absrel_init: f64,
    pub absrel_confident: f64,
    pub absrel_uniform: f64,
    /// Relative AbsRel reduction of the confident run over the uniform one.
    pub improvement_pct: f64,
    /// Relative AbsRel reduction of the confident run over initialization.
    pub ssft_improvement_pct: f64,
    pub confident: RunSummary,
    pub uniform: RunSummary,
}

/// Intermediate maps, for optional dumps.
#[derive(Clone, Debug)]
pub struct DemoArtifacts {
    pub gt_rgb: DepthMap,
    pub gt_thermal: DepthMap,
    pub teacher: DepthMap,
    pub corrupted: Mask,
    pub confidence: Grid<f64>,
    pub student_init: DepthMap,
    pub student_confident: DepthMap,
    pub student_uniform: DepthMap,
    /// Thermal pixels evaluated by AbsRel.
    pub supervised: Mask,
}

struct Problem<'a> {
    cfg: &'a DistillConfig,
    teacher: &'a DepthMap,
    u_rt: crate::geometry::PixelCoordGrid,
    chain: ThermalToRgbWarp,
    t_rgb_thermal: RigidTransform,
}

impl Problem<'_> {
    fn optimize(&self, init: &DepthMap, confidence: &Grid<f64>) -> Result<(DepthMap, Vec<f64>)> {
        let rig = &self.cfg.rig;
        let weights = LossWeights {
            alpha: self.cfg.alpha,
            beta: self.cfg.beta,
            ..Default::default()
        };
        let options = CombinedOptions {
            consistency: ConsistencyOptions {
                keep_fraction: self.cfg.keep_fraction,
                similarity_keep: 1.0,
                normalizer: self.cfg.normalizer,
            },
            ..Default::default()
        };
        let mut student = init.values().clone();
        let mut curve = Vec::with_capacity(self.cfg.steps);
        for step in 0..self.cfg.steps {
            let current = DepthMap::from_values(student.clone());
            let warped = warped_thermal_depth(
                &current,
                &self.u_rt,
                &rig.thermal,
                &rig.rgb,
                &self.t_rgb_thermal,
            )?;
            let inputs = LossInputs {
                rgb_depth: Some(self.teacher),
                warped_thermal: Some(&warped),
                confidence: Some(confidence),
                ..Default::default()
            };
            let loss = combined_loss(&inputs, &weights, false, &options)?;
            if !loss.value.is_finite() {
                return Err(Error::Diverged {
                    step,
                    trace: format!("loss {}", loss.value),
                });
            }
            curve.push(loss.value);
            let grad = self
                .chain
                .pullback(&loss.gradients[&GradTarget::WarpedThermal], &warped)?;
            for (d, g) in student.data_mut().iter_mut().zip(grad.iter()) {
                *d = (*d - self.cfg.step_size * g).max(MIN_CORRUPTED_DEPTH);
            }
        }
        Ok((DepthMap::from_values(student), curve))
    }
}

fn absrel(pred: &DepthMap, gt: &DepthMap, mask: &Mask) -> Result<f64> {
    Ok(compute_metrics(pred, gt, Some(mask))?.abs_rel)
}

/// Renders the scene for both cameras, corrupts the RGB ground truth into a
/// teacher and distills it into a thermal student twice: weighted by the
/// configured confidence and with `W ≡ 1`.
pub fn run_distillation_demo(cfg: &DistillConfig) -> Result<(DistillReport, DemoArtifacts)> {
    cfg.validate()?;
    let rig = &cfg.rig;
    let t_rgb_thermal = rig.t_rgb_thermal();
    let gt_rgb = render_depth(&cfg.scene, &rig.rgb, &RigidTransform::identity())?;
    let gt_thermal = render_depth(&cfg.scene, &rig.thermal, &t_rgb_thermal)?;
    let (teacher, corrupted) = corrupt_depth(&gt_rgb, &cfg.corruption, cfg.seed)?;

    // Sub-pixel thermal location of each RGB pixel, from the teacher depth.
    let u_rt = warp_depth(&teacher, &rig.rgb, &rig.thermal, &rig.t_thermal_rgb)?.coords;
    let chain = ThermalToRgbWarp::new(&u_rt, &rig.thermal, &rig.rgb, &t_rgb_thermal)?;
    let student_init = DepthMap::new(
        gt_thermal.values().map(|d| d * cfg.init_scale),
        gt_thermal.valid().clone(),
    )?;

    // Bilinear weight each thermal pixel receives from RGB pixels whose
    // warped value is valid at initialization. Pixels read with little total
    // weight learn too slowly to be judged, so evaluation needs at least
    // `MIN_SUPERVISION_WEIGHT`.
    let warped_init =
        warped_thermal_depth(&student_init, &u_rt, &rig.thermal, &rig.rgb, &t_rgb_thermal)?;
    let (tw, th) = rig.thermal.dims();
    let mut weight = Grid::filled(tw, th, 0.0);
    for (j, taps) in chain.taps().iter().enumerate() {
        if let (true, true, Some(taps)) = (
            teacher.valid().data()[j],
            warped_init.valid().data()[j],
            taps,
        ) {
            for (k, w) in taps.iter() {
                weight.data_mut()[k] += w;
            }
        }
    }
    let supervised = weight.map(|&w| w >= MIN_SUPERVISION_WEIGHT);
    let supervised = supervised.and(gt_thermal.valid());
    if supervised.count() == 0 {
        return Err(Error::Empty("no thermal pixel receives supervision".into()));
    }

    let provider = cfg.confidence_mode.provider(cfg.fit);
    let confidence = provider.confidence(&teacher, &gt_rgb, cfg.beta)?;
    let uniform = UniformConfidence.confidence(&teacher, &gt_rgb, cfg.beta)?;

    let problem = Problem {
        cfg,
        teacher: &teacher,
        u_rt,
        chain,
        t_rgb_thermal,
    };
    let (student_confident, curve_confident) = problem.optimize(&student_init, &confidence)?;
    let (student_uniform, curve_uniform) = problem.optimize(&student_init, &uniform)?;

    let absrel_init = absrel(&student_init, &gt_thermal, &supervised)?;
    let absrel_confident = absrel(&student_confident, &gt_thermal, &supervised)?;
    let absrel_uniform = absrel(&student_uniform, &gt_thermal, &supervised)?;
    let pct = |from: f64, to: f64| {
        if from > 0.0 {
            100.0 * (from - to) / from
        } else {
            0.0
        }
    };
    let report = DistillReport {
        seed: cfg.seed,
        num_supervised_pixels: supervised.count(),
        absrel_init,
        absrel_confident,
        absrel_uniform,
        improvement_pct: pct(absrel_uniform, absrel_confident),
        ssft_improvement_pct: pct(absrel_init, absrel_confident),
        confident: RunSummary {
            confidence: provider.name().to_string(),
            absrel_final: absrel_confident,
            loss_curve: curve_confident,
        },
        uniform: RunSummary {
            confidence: UniformConfidence.name().to_string(),
            absrel_final: absrel_uniform,
            loss_curve: curve_uniform,
        },
    };
    let artifacts = DemoArtifacts {
        gt_rgb,
        gt_thermal,
        teacher,
        corrupted,
        confidence,
        student_init,
        student_confident,
        student_uniform,
        supervised,
    };
    Ok((report, artifacts))
}
