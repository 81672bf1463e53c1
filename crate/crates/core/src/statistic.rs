//! Core data carriers: the statistic vector W and per-hypothesis side
//! information U.

use crate::error::{Error, Result};

/// Feature-importance statistics W with exact sign/magnitude views.
///
/// The sign of a null statistic is a fair coin; everything downstream is
/// built around reading `|W_j|` freely while treating signs as the guarded
/// resource.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticVector {
    values: Vec<f64>,
}

impl StatisticVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("statistic vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("statistic vector"));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, j: usize) -> f64 {
        self.values[j]
    }

    pub fn magnitude(&self, j: usize) -> f64 {
        self.values[j].abs()
    }

    /// Sign in {-1, 0, +1}; exact zero is its own category (zero statistics
    /// can never be selected).
    pub fn sign(&self, j: usize) -> i8 {
        let v = self.values[j];
        if v > 0.0 {
            1
        } else if v < 0.0 {
            -1
        } else {
            0
        }
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.abs()).collect()
    }
}

/// Per-hypothesis side information, one row per hypothesis, columns
/// standardized to mean 0 / variance 1 (constant columns are centered to 0).
///
/// A zero-column matrix is legal and means "no side information"; model fits
/// then reduce to intercept-only.
#[derive(Debug, Clone, PartialEq)]
pub struct SideInfoMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>, // row-major
}

impl SideInfoMatrix {
    /// Standardize and pack the given columns.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        if rows == 0 {
            return Err(Error::EmptyInput("side info rows"));
        }
        for (c, col) in columns.iter().enumerate() {
            if col.len() != rows {
                return Err(Error::DimensionMismatch(format!(
                    "side info column {c} has {} entries, expected {rows}",
                    col.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("side info"));
            }
        }
        let cols = columns.len();
        let mut data = vec![0.0; rows * cols];
        for (c, col) in columns.iter().enumerate() {
            let mean = col.iter().sum::<f64>() / rows as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64;
            let scale = if var > 1e-24 { var.sqrt() } else { 1.0 };
            for r in 0..rows {
                data[r * cols + c] = (col[r] - mean) / scale;
            }
        }
        Ok(Self { rows, cols, data })
    }

    /// No side information at all (zero columns).
    pub fn empty(rows: usize) -> Self {
        Self {
            rows,
            cols: 0,
            data: Vec::new(),
        }
    }

    /// The "prior order" side information U_j = j.
    pub fn from_index_order(rows: usize) -> Self {
        let col: Vec<f64> = (0..rows).map(|j| j as f64).collect();
        Self::from_columns(rows, &[col]).expect("index column is always valid")
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.cols..(j + 1) * self.cols]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_magnitude_decomposition_is_exact() {
        let w = StatisticVector::new(vec![1.5, -0.7, 0.0, 0.3]).unwrap();
        for j in 0..w.len() {
            assert_eq!(w.sign(j) as f64 * w.magnitude(j), w.value(j));
        }
        assert_eq!(w.sign(2), 0);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(StatisticVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(StatisticVector::new(vec![]).is_err());
    }

    #[test]
    fn standardization_centers_and_scales() {
        let u = SideInfoMatrix::from_columns(4, &[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let col: Vec<f64> = (0..4).map(|r| u.row(r)[0]).collect();
        let mean: f64 = col.iter().sum::<f64>() / 4.0;
        let var: f64 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standardization_is_idempotent() {
        let raw = vec![3.0, -1.0, 4.0, 1.0, 5.0];
        let once = SideInfoMatrix::from_columns(5, &[raw]).unwrap();
        let col: Vec<f64> = (0..5).map(|r| once.row(r)[0]).collect();
        let twice = SideInfoMatrix::from_columns(5, &[col]).unwrap();
        for r in 0..5 {
            assert!((once.row(r)[0] - twice.row(r)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column_becomes_zero() {
        let u = SideInfoMatrix::from_columns(3, &[vec![2.0, 2.0, 2.0]]).unwrap();
        for r in 0..3 {
            assert_eq!(u.row(r)[0], 0.0);
        }
    }

    #[test]
    fn empty_has_zero_width_rows() {
        let u = SideInfoMatrix::empty(5);
        assert_eq!(u.ncols(), 0);
        assert_eq!(u.row(3).len(), 0);
    }
}
