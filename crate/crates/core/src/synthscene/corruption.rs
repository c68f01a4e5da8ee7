use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Grid, Mask};

/// Smallest depth a corrupted pixel may take (meters).
pub const MIN_CORRUPTED_DEPTH: f64 = 1e-3;

/// Half-open pixel rectangle `[x, x + width) × [y, y + height)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.width && y < self.y + self.height
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    pub regions: Vec<Rect>,
    /// Added inside the regions (meters).
    pub bias: f64,
    /// Gaussian noise standard deviation inside the regions (meters).
    pub region_noise: f64,
    /// Gaussian noise standard deviation elsewhere (meters).
    pub outside_noise: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            regions: vec![Rect {
                x: 16,
                y: 12,
                width: 32,
                height: 24,
            }],
            bias: 2.0,
            region_noise: 0.1,
            outside_noise: 0.02,
        }
    }
}

impl CorruptionConfig {
    pub fn none() -> Self {
        Self {
            regions: Vec::new(),
            bias: 0.0,
            region_noise: 0.0,
            outside_noise: 0.0,
        }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        for r in &self.regions {
            if r.width == 0 || r.height == 0 || r.x + r.width > width || r.y + r.height > height {
                return Err(Error::Config(format!(
                    "corruption region {r:?} exceeds the {width}x{height} image"
                )));
            }
        }
        for (name, v) in [
            ("region_noise", self.region_noise),
            ("outside_noise", self.outside_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !self.bias.is_finite() {
            return Err(Error::Config("bias must be finite".into()));
        }
        Ok(())
    }

    pub fn region_mask(&self, width: usize, height: usize) -> Mask {
        Grid::from_fn(width, height, |x, y| {
            self.regions.iter().any(|r| r.contains(x, y))
        })
    }
}

/// Adds `bias` plus noise inside the regions and small noise elsewhere.
/// Exactly one normal draw is consumed per pixel in row-major order, so the
/// output depends only on `seed`. Returns the corrupted map and the region
/// mask.
pub fn corrupt_depth(
    depth: &DepthMap,
    config: &CorruptionConfig,
    seed: u64,
) -> Result<(DepthMap, Mask)> {
    let (w, h) = depth.dims();
    config.validate(w, h)?;
    let mask = config.region_mask(w, h);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut values = depth.values().clone();
    for (i, v) in values.data_mut().iter_mut().enumerate() {
        let z: f64 = unit.sample(&mut rng);
        if !depth.valid().data()[i] {
            continue;
        }
        let delta = if mask.data()[i] {
            config.bias + config.region_noise * z
        } else {
            config.outside_noise * z
        };
        if delta != 0.0 {
            *v = (*v + delta).max(MIN_CORRUPTED_DEPTH);
        }
    }
    Ok((DepthMap::new(values, depth.valid().clone())?, mask))
}
