//! Dense row-major rasters and the masked variants used for depth maps.

use crate::error::{Error, Result};

/// A `width × height` raster stored row-major. Pixel `(x, y)` is column `x`
/// of row `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type Mask = Grid<bool>;

/// Three-channel image with per-channel values normalized to `[0, 1]`.
pub type Image3 = Grid<[f64; 3]>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height} grid",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn index_of(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    /// Inverse of [`Grid::index_of`].
    #[inline]
    pub fn coords_of(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[self.index_of(x, y)]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        let i = self.index_of(x, y);
        &mut self.data[i]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = self.index_of(x, y);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn ensure_same_shape<U>(&self, other: &Grid<U>, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        debug_assert!(self.same_shape(other));
        Grid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

/// A scalar raster paired with a validity mask. Values under an unset mask
/// bit are meaningless (usually NaN) and must not be read.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedGrid {
    pub values: Grid<f64>,
    pub valid: Mask,
}

impl MaskedGrid {
    pub fn new(values: Grid<f64>, valid: Mask) -> Result<Self> {
        values.ensure_same_shape(&valid, "values vs mask")?;
        Ok(Self { values, valid })
    }

    pub fn all_valid(values: Grid<f64>) -> Self {
        let valid = Grid::filled(values.width(), values.height(), true);
        Self { values, valid }
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    /// Value at `(x, y)` if the pixel is valid.
    pub fn value(&self, x: usize, y: usize) -> Option<f64> {
        let i = self.values.index_of(x, y);
        self.valid.data()[i].then(|| self.values.data()[i])
    }
}

/// Per-pixel metric depth with validity mask.
///
/// Valid pixels always hold finite depths `> 0`. Invalid pixels store NaN so
/// that they serialize as NaN in PFM files.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    values: Grid<f64>,
    valid: Mask,
}

impl DepthMap {
    /// Builds a depth map from raw values; any non-finite or non-positive
    /// entry becomes invalid.
    pub fn from_values(values: Grid<f64>) -> Self {
        let valid = values.map(|&v| v.is_finite() && v > 0.0);
        Self::from_parts_unchecked(values, valid)
    }

    /// Combines values and an explicit mask. Pixels flagged valid but holding
    /// a non-positive or non-finite depth are rejected.
    pub fn new(values: Grid<f64>, valid: Mask) -> Result<Self> {
        values.ensure_same_shape(&valid, "depth values vs mask")?;
        for (i, (&v, &ok)) in values.iter().zip(valid.iter()).enumerate() {
            if ok && !(v.is_finite() && v > 0.0) {
                let (x, y) = values.coords_of(i);
                return Err(Error::Domain(format!(
                    "depth {v} at ({x}, {y}) is flagged valid"
                )));
            }
        }
        Ok(Self::from_parts_unchecked(values, valid))
    }

    /// Like [`DepthMap::new`] but pixels whose value breaks the invariant are
    /// silently invalidated instead of rejected.
    pub fn from_masked(masked: MaskedGrid) -> Self {
        let MaskedGrid { values, valid } = masked;
        let valid = Grid::from_vec(
            values.width(),
            values.height(),
            values
                .iter()
                .zip(valid.iter())
                .map(|(&v, &ok)| ok && v.is_finite() && v > 0.0)
                .collect(),
        )
        .expect("shapes already match");
        Self::from_parts_unchecked(values, valid)
    }

    fn from_parts_unchecked(mut values: Grid<f64>, valid: Mask) -> Self {
        for (v, &ok) in values.data_mut().iter_mut().zip(valid.iter()) {
            if !ok {
                *v = f64::NAN;
            }
        }
        Self { values, valid }
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Self {
        Self::from_values(Grid::filled(width, height, depth))
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn valid(&self) -> &Mask {
        &self.valid
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    pub fn depth(&self, x: usize, y: usize) -> Option<f64> {
        let i = self.values.index_of(x, y);
        self.valid.data()[i].then(|| self.values.data()[i])
    }

    pub fn num_valid(&self) -> usize {
        self.valid.count()
    }

    /// Restricts the mask; never makes a pixel valid.
    pub fn restrict(&self, keep: &Mask) -> Self {
        Self::from_parts_unchecked(self.values.clone(), self.valid.and(keep))
    }

    pub fn to_masked(&self) -> MaskedGrid {
        MaskedGrid {
            values: self.values.clone(),
            valid: self.valid.clone(),
        }
    }

    pub fn into_parts(self) -> (Grid<f64>, Mask) {
        (self.values, self.valid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_map_invalidates_non_positive_values() {
        let g = Grid::from_vec(3, 1, vec![1.0, 0.0, f64::NAN]).unwrap();
        let d = DepthMap::from_values(g);
        assert_eq!(d.valid().data(), &[true, false, false]);
        assert!(d.values().get(1, 0).is_nan());
        assert_eq!(d.depth(0, 0), Some(1.0));
    }

    #[test]
    fn depth_map_rejects_flagged_negative_depth() {
        let g = Grid::from_vec(2, 1, vec![1.0, -2.0]).unwrap();
        let m = Grid::filled(2, 1, true);
        assert!(DepthMap::new(g, m).is_err());
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Grid::from_vec(2, 2, vec![0u8; 3]).is_err());
    }

    #[test]
    fn coords_round_trip() {
        let g = Grid::filled(5, 4, 0u8);
        for i in 0..g.len() {
            let (x, y) = g.coords_of(i);
            assert_eq!(g.index_of(x, y), i);
        }
    }
}
