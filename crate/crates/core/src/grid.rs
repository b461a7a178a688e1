//! Row-major f64 grid, the common currency for images and gradient fields.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Grid2D {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Grid2D {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Grid2D::from_vec",
                format!("{} values ({rows}x{cols})", rows * cols),
                format!("{}", data.len()),
            ));
        }
        Ok(Grid2D { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Grid2D) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid2D {
        Grid2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp_in_place(&mut self, lo: f64, hi: f64) {
        for v in &mut self.data {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn crop(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<Grid2D> {
        if r0 + rows > self.rows || c0 + cols > self.cols {
            return Err(Error::shape(
                "Grid2D::crop",
                format!("window within {}x{}", self.rows, self.cols),
                format!("{rows}x{cols} at ({r0},{c0})"),
            ));
        }
        let mut out = Grid2D::zeros(rows, cols);
        for r in 0..rows {
            let src = (r0 + r) * self.cols + c0;
            out.data[r * cols..(r + 1) * cols].copy_from_slice(&self.data[src..src + cols]);
        }
        Ok(out)
    }

    pub fn flipped(&self, flip: Flip) -> Grid2D {
        let mut out = Grid2D::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let (sr, sc) = flip.source_index(r, c, self.rows, self.cols);
                out.data[r * self.cols + c] = self.data[sr * self.cols + sc];
            }
        }
        out
    }
}

/// The four diagonal orientations an autoregressive raster scan can take,
/// expressed as axis flips of the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flip {
    Identity,
    Horizontal,
    Vertical,
    Both,
}

impl Flip {
    pub const ALL: [Flip; 4] = [Flip::Identity, Flip::Horizontal, Flip::Vertical, Flip::Both];

    #[inline]
    fn source_index(self, r: usize, c: usize, rows: usize, cols: usize) -> (usize, usize) {
        match self {
            Flip::Identity => (r, c),
            Flip::Horizontal => (r, cols - 1 - c),
            Flip::Vertical => (rows - 1 - r, c),
            Flip::Both => (rows - 1 - r, cols - 1 - c),
        }
    }

    /// Flips are involutions: applying the same flip twice is the identity.
    pub fn apply(self, grid: &Grid2D) -> Grid2D {
        grid.flipped(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Grid2D::from_vec(2, 3, vec![0.0; 5]).is_err());
        assert!(Grid2D::from_vec(2, 3, vec![0.0; 6]).is_ok());
    }

    #[test]
    fn flips_are_involutions() {
        let g = Grid2D::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        for flip in Flip::ALL {
            assert_eq!(flip.apply(&flip.apply(&g)), g);
        }
    }

    #[test]
    fn horizontal_flip_reverses_rows() {
        let g = Grid2D::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let f = g.flipped(Flip::Horizontal);
        assert_eq!(f.data(), &[3.0, 2.0, 1.0]);
    }

    #[test]
    fn crop_extracts_window() {
        let g = Grid2D::from_vec(3, 3, (0..9).map(|v| v as f64).collect()).unwrap();
        let c = g.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.data(), &[4.0, 5.0, 7.0, 8.0]);
        assert!(g.crop(2, 2, 2, 2).is_err());
    }
}
