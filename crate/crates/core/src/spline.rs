//! Natural cubic spline basis with fixed quantile knots.
//!
//! Smoothing is controlled by the knot count plus a small ridge in the
//! downstream fit rather than by a nested cross-validation loop.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const DEFAULT_INTERIOR_KNOTS: usize = 5;

/// Per-coordinate natural cubic basis. With k interior knots a coordinate
/// contributes k + 1 columns (linear term plus k truncated-cubic terms);
/// one shared constant column completes the basis, i.e. k + 2 functions
/// per coordinate counting the constant.
#[derive(Debug, Clone)]
pub struct SplineBasis {
    // full knot vectors (boundary knots included), one per coordinate;
    // a coordinate with fewer than 3 distinct knots degrades to linear
    knots: Vec<Vec<f64>>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

impl SplineBasis {
    /// Place `n_interior` knots at empirical quantiles of each coordinate
    /// (boundary knots at the min and max). `columns` holds the training
    /// values coordinate by coordinate.
    pub fn from_quantiles(columns: &[Vec<f64>], n_interior: usize) -> Result<Self> {
        let mut knots = Vec::with_capacity(columns.len());
        for col in columns {
            if col.is_empty() {
                return Err(Error::EmptyInput("spline training column"));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("spline training column"));
            }
            let mut sorted = col.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let mut kv = Vec::with_capacity(n_interior + 2);
            kv.push(sorted[0]);
            for i in 0..n_interior {
                kv.push(quantile(&sorted, (i + 1) as f64 / (n_interior + 1) as f64));
            }
            kv.push(sorted[sorted.len() - 1]);
            // collapse duplicates; heavily tied data just gets fewer knots
            kv.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
            knots.push(kv);
        }
        Ok(Self { knots })
    }

    pub fn n_coordinates(&self) -> usize {
        self.knots.len()
    }

    /// Total design columns including the shared constant.
    pub fn n_columns(&self) -> usize {
        1 + self
            .knots
            .iter()
            .map(|kv| if kv.len() >= 3 { kv.len() - 1 } else { 1 })
            .sum::<usize>()
    }

    /// Evaluate the basis at one point (`coords` must match the training
    /// coordinate count).
    pub fn eval_into(&self, coords: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(coords.len(), self.knots.len());
        out.clear();
        out.push(1.0);
        for (c, kv) in self.knots.iter().enumerate() {
            let x = coords[c];
            out.push(x);
            if kv.len() < 3 {
                continue;
            }
            let k = kv.len();
            let last = kv[k - 1];
            let second_last = kv[k - 2];
            let d = |knot: f64| -> f64 {
                let a = (x - knot).max(0.0).powi(3);
                let b = (x - last).max(0.0).powi(3);
                (a - b) / (last - knot)
            };
            let d_ref = d(second_last);
            for &knot in &kv[..k - 2] {
                out.push(d(knot) - d_ref);
            }
        }
    }

    /// Design matrix for a batch of points given as coordinate columns.
    pub fn design(&self, columns: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        if columns.len() != self.knots.len() {
            return Err(Error::DimensionMismatch(format!(
                "basis built for {} coordinates, given {}",
                self.knots.len(),
                columns.len()
            )));
        }
        let n = columns.first().map_or(0, |c| c.len());
        if n == 0 {
            return Err(Error::EmptyInput("spline design points"));
        }
        let d = self.n_columns();
        let mut m = DMatrix::<f64>::zeros(n, d);
        let mut row = Vec::with_capacity(d);
        let mut coords = vec![0.0; columns.len()];
        for i in 0..n {
            for (c, col) in columns.iter().enumerate() {
                coords[c] = col[i];
            }
            self.eval_into(&coords, &mut row);
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn dimension_is_knots_plus_two_per_coordinate() {
        let col: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let basis = SplineBasis::from_quantiles(&[col], DEFAULT_INTERIOR_KNOTS).unwrap();
        // constant + linear + 5 truncated terms
        assert_eq!(basis.n_columns(), DEFAULT_INTERIOR_KNOTS + 2);
    }

    #[test]
    fn linear_beyond_boundaries() {
        let col: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let basis = SplineBasis::from_quantiles(&[col], 4).unwrap();
        // second differences vanish outside the boundary knots
        let probe = |x: f64| {
            let mut out = Vec::new();
            basis.eval_into(&[x], &mut out);
            out
        };
        let h = 0.01;
        for x in [1.5, 2.0, 3.0] {
            let f0 = probe(x - h);
            let f1 = probe(x);
            let f2 = probe(x + h);
            for j in 0..f1.len() {
                let second = (f2[j] - 2.0 * f1[j] + f0[j]) / (h * h);
                assert!(second.abs() < 1e-6, "column {j} curved at {x}: {second}");
            }
        }
    }

    #[test]
    fn fits_a_smooth_function_better_than_a_line() {
        let mut rng = crate::rng::stream_rng(3, crate::rng::domain::TEST, 0);
        let n = 400;
        let xs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| (x).sin()).collect();
        let basis = SplineBasis::from_quantiles(&[xs.clone()], DEFAULT_INTERIOR_KNOTS).unwrap();
        let design = basis.design(&[xs.clone()]).unwrap();
        let coef =
            crate::glm::weighted_least_squares(&design, &ys, &vec![1.0; n], 1e-8).unwrap();
        let fitted = design * &coef;
        let resid: f64 = fitted
            .iter()
            .zip(&ys)
            .map(|(f, y)| (f - y).powi(2))
            .sum::<f64>()
            / n as f64;
        assert!(resid < 0.01, "spline residual too large: {resid}");
    }

    #[test]
    fn constant_coordinate_degrades_gracefully() {
        let basis = SplineBasis::from_quantiles(&[vec![2.0; 10]], 5).unwrap();
        assert_eq!(basis.n_columns(), 2); // constant + (degenerate) linear
        let mut out = Vec::new();
        basis.eval_into(&[2.0], &mut out);
        assert!(out.iter().all(|v| v.is_finite()));
    }
}
