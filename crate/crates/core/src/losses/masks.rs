//! Quantile-based pixel selection: residual trimming and similarity masking.

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask, MaskedGrid};
use crate::numeric::quantile;

fn check_fraction(keep_fraction: f64) -> Result<()> {
    if keep_fraction > 0.0 && keep_fraction <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "keep fraction must lie in (0, 1], got {keep_fraction}"
        )))
    }
}

fn valid_values(values: &Grid<f64>, valid: &Mask) -> Vec<f64> {
    values
        .iter()
        .zip(valid.iter())
        .filter_map(|(&v, &ok)| ok.then_some(v))
        .collect()
}

/// Threshold used by [`trim_mask`]: the `keep_fraction` quantile of the valid
/// residuals, or `None` when nothing is valid.
pub fn trim_threshold(
    residuals: &Grid<f64>,
    valid: &Mask,
    keep_fraction: f64,
) -> Result<Option<f64>> {
    check_fraction(keep_fraction)?;
    residuals.ensure_same_shape(valid, "residuals vs mask")?;
    Ok(quantile(&valid_values(residuals, valid), keep_fraction))
}

/// Keeps valid pixels whose residual does not exceed the `keep_fraction`
/// quantile of the valid residuals (drops the largest `1 − keep_fraction`).
pub fn trim_mask(residuals: &Grid<f64>, valid: &Mask, keep_fraction: f64) -> Result<Mask> {
    if keep_fraction == 1.0 {
        residuals.ensure_same_shape(valid, "residuals vs mask")?;
        return Ok(valid.clone());
    }
    let Some(threshold) = trim_threshold(residuals, valid, keep_fraction)? else {
        return Ok(Grid::filled(residuals.width(), residuals.height(), false));
    };
    Grid::from_vec(
        residuals.width(),
        residuals.height(),
        residuals
            .iter()
            .zip(valid.iter())
            .map(|(&r, &ok)| ok && r <= threshold)
            .collect(),
    )
}

/// Keeps the valid pixels in the top `keep_fraction` of similarity, i.e. those
/// at or above the `1 − keep_fraction` quantile.
pub fn similarity_mask(similarity: &MaskedGrid, keep_fraction: f64) -> Result<Mask> {
    check_fraction(keep_fraction)?;
    if keep_fraction == 1.0 {
        return Ok(similarity.valid.clone());
    }
    let Some(threshold) = quantile(
        &valid_values(&similarity.values, &similarity.valid),
        1.0 - keep_fraction,
    ) else {
        return Ok(Grid::filled(similarity.width(), similarity.height(), false));
    };
    Grid::from_vec(
        similarity.width(),
        similarity.height(),
        similarity
            .values
            .iter()
            .zip(similarity.valid.iter())
            .map(|(&s, &ok)| ok && s >= threshold)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Grid<f64> {
        Grid::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn trims_largest_residual() {
        let r = row(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let valid = Grid::filled(5, 1, true);
        let m = trim_mask(&r, &valid, 0.8).unwrap();
        assert_eq!(m.data(), &[true, true, true, true, false]);
    }

    #[test]
    fn equal_residuals_are_all_kept() {
        let r = row(&[0.7; 6]);
        let valid = Grid::filled(6, 1, true);
        assert_eq!(trim_mask(&r, &valid, 0.8).unwrap().count(), 6);
    }

    #[test]
    fn full_keep_is_identity() {
        let r = row(&[3.0, 1.0, 2.0]);
        let valid = Grid::from_vec(3, 1, vec![true, false, true]).unwrap();
        assert_eq!(trim_mask(&r, &valid, 1.0).unwrap(), valid);
        let s = MaskedGrid::new(r, valid.clone()).unwrap();
        assert_eq!(similarity_mask(&s, 1.0).unwrap(), valid);
    }

    #[test]
    fn no_valid_pixels_gives_empty_mask() {
        let r = row(&[1.0, 2.0]);
        let valid = Grid::filled(2, 1, false);
        assert_eq!(trim_mask(&r, &valid, 0.8).unwrap().count(), 0);
    }

    #[test]
    fn invalid_residuals_do_not_shift_threshold() {
        let r = row(&[1.0, 2.0, 3.0, 4.0, 5.0, 100.0]);
        let valid = Grid::from_vec(6, 1, vec![true, true, true, true, true, false]).unwrap();
        let m = trim_mask(&r, &valid, 0.8).unwrap();
        assert_eq!(m.data(), &[true, true, true, true, false, false]);
    }

    #[test]
    fn similarity_drops_lowest() {
        let s = MaskedGrid::all_valid(row(&[0.1, 0.5, 0.9, 0.95, 0.99]));
        let m = similarity_mask(&s, 0.8).unwrap();
        assert_eq!(m.data(), &[false, true, true, true, true]);
        let c = MaskedGrid::all_valid(row(&[0.4; 5]));
        assert_eq!(similarity_mask(&c, 0.8).unwrap().count(), 5);
    }

    #[test]
    fn rejects_bad_fraction() {
        let r = row(&[1.0]);
        let v = Grid::filled(1, 1, true);
        assert!(trim_mask(&r, &v, 0.0).is_err());
        assert!(trim_mask(&r, &v, 1.5).is_err());
    }
}
