//! Pixel observation masks for inpainting.

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::rng::SeededRng;

/// Per-pixel observation flags; `true` means the pixel is observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    rows: usize,
    cols: usize,
    observed: Vec<bool>,
}

impl PixelMask {
    pub fn all_observed(rows: usize, cols: usize) -> Self {
        PixelMask {
            rows,
            cols,
            observed: vec![true; rows * cols],
        }
    }

    pub fn from_flags(rows: usize, cols: usize, observed: Vec<bool>) -> Result<Self> {
        if observed.len() != rows * cols {
            return Err(Error::shape(
                "PixelMask::from_flags",
                format!("{}", rows * cols),
                format!("{}", observed.len()),
            ));
        }
        Ok(PixelMask { rows, cols, observed })
    }

    /// Marks exactly `round(missing_fraction * rows * cols)` pixels missing,
    /// chosen uniformly without replacement.
    pub fn random(rows: usize, cols: usize, missing_fraction: f64, rng: &mut SeededRng) -> Result<Self> {
        if !(0.0..=1.0).contains(&missing_fraction) {
            return Err(Error::InvalidArg(format!(
                "missing fraction must lie in [0,1], got {missing_fraction}"
            )));
        }
        let n = rows * cols;
        let missing = (missing_fraction * n as f64).round() as usize;
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..missing {
            let j = i + rng.gen_index(n - i);
            idx.swap(i, j);
        }
        let mut observed = vec![true; n];
        for &k in &idx[..missing] {
            observed[k] = false;
        }
        Ok(PixelMask { rows, cols, observed })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_observed(&self, r: usize, c: usize) -> bool {
        self.observed[r * self.cols + c]
    }

    pub fn flags(&self) -> &[bool] {
        &self.observed
    }

    pub fn missing_count(&self) -> usize {
        self.observed.iter().filter(|o| !**o).count()
    }

    /// 1.0 for observed, 0.0 for missing; the on-disk representation.
    pub fn to_grid(&self) -> Grid2D {
        Grid2D::from_vec(
            self.rows,
            self.cols,
            self.observed.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect(),
        )
        .expect("flag count matches shape")
    }

    pub fn from_grid(grid: &Grid2D) -> Self {
        PixelMask {
            rows: grid.rows(),
            cols: grid.cols(),
            observed: grid.data().iter().map(|&v| v >= 0.5).collect(),
        }
    }
}
