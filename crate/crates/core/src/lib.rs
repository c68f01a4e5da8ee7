//! Cross-modal depth distillation toolkit: camera geometry, thermal imagery,
//! training losses with analytic gradients, evaluation metrics, LiDAR
//! filtering, synthetic scenes and obstacle maps.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod depthfilter;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod grid;
pub mod imagery;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod numeric;
pub mod obstaclemap;
pub mod synthscene;

pub use error::{Error, Result};
pub use grid::{DepthMap, Grid, Image3, Mask, MaskedGrid};
