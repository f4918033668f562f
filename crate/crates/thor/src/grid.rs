//! 2D grayscale raster used for inputs, noised states, restorations, and
//! anomaly maps.

use ndarray::Array2;

use crate::error::{Error, Result};

/// A dense H×W grid of real values.
///
/// Clean and restored images live in `[0, 1]`; noised diffusion states and
/// raw noise fields are unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    data: Array2<f64>,
}

impl ImageGrid {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (h, w) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::config(format!("zero-area grid shape {}x{}", h, w)));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::config("non-finite value in grid"));
        }
        Ok(ImageGrid { data })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::constant(height, width, 0.0)
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::config(format!(
                "zero-area grid shape {}x{}",
                height, width
            )));
        }
        Ok(ImageGrid {
            data: Array2::from_elem((height, width), value),
        })
    }

    /// Builds a grid by evaluating `f` in row-major order.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        Self::new(Array2::from_shape_fn((height, width), |(r, c)| f(r, c)))
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }

    pub fn into_values(self) -> Array2<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[(row, col)] = value;
    }

    /// Errors unless `other` has the same shape as `self`.
    pub fn check_same_shape(&self, other: &ImageGrid) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageGrid {
        ImageGrid {
            data: self.data.mapv(|v| f(v)),
        }
    }

    pub fn zip_map(&self, other: &ImageGrid, f: impl Fn(f64, f64) -> f64) -> Result<ImageGrid> {
        self.check_same_shape(other)?;
        let mut out = self.data.clone();
        out.zip_mut_with(&other.data, |a, &b| *a = f(*a, b));
        Ok(ImageGrid { data: out })
    }

    pub fn clamp01(&self) -> ImageGrid {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.len() as f64
    }

    /// Mean absolute difference against another grid of the same shape.
    pub fn mean_abs_diff(&self, other: &ImageGrid) -> Result<f64> {
        self.check_same_shape(other)?;
        let n = self.len() as f64;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n)
    }

    pub fn max_abs_diff(&self, other: &ImageGrid) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}
