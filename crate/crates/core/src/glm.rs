//! Small weighted GLM solvers used by the model-based filters: ridge
//! logistic regression via IRLS (fractional responses allowed) and a
//! log-link fit for positive-mean responses.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_RIDGE: f64 = 1e-6;
pub const MAX_IRLS_ITER: usize = 50;
pub const IRLS_TOL: f64 = 1e-8;

const ETA_CLAMP: f64 = 30.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x), stable for large |x|.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_rows(x: &DMatrix<f64>, y: &[f64], weights: &[f64]) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::EmptyInput("glm design"));
    }
    if y.len() != x.nrows() || weights.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "glm design has {} rows, response {}, weights {}",
            x.nrows(),
            y.len(),
            weights.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite())
        || y.iter().any(|v| !v.is_finite())
        || weights.iter().any(|v| !v.is_finite() || *v < 0.0)
    {
        return Err(Error::NonFinite("glm inputs"));
    }
    Ok(())
}

/// Solve (X' diag(w*) X + ridge I) b = X' diag(w*) z.
fn weighted_ridge_solve(
    x: &DMatrix<f64>,
    working_w: &[f64],
    z: &[f64],
    ridge: f64,
) -> Result<DVector<f64>> {
    let d = x.ncols();
    let mut xtwx = DMatrix::<f64>::zeros(d, d);
    let mut xtwz = DVector::<f64>::zeros(d);
    for i in 0..x.nrows() {
        let wi = working_w[i];
        if wi == 0.0 {
            continue;
        }
        let row = x.row(i);
        for a in 0..d {
            let xa = row[a] * wi;
            xtwz[a] += xa * z[i];
            for b in a..d {
                xtwx[(a, b)] += xa * row[b];
            }
        }
    }
    for a in 0..d {
        xtwx[(a, a)] += ridge;
        for b in 0..a {
            xtwx[(a, b)] = xtwx[(b, a)];
        }
    }
    Cholesky::new(xtwx)
        .map(|ch| ch.solve(&xtwz))
        .ok_or(Error::RankDeficient)
}

/// Weighted ridge logistic regression fit by IRLS.
///
/// `y` may be fractional in [0, 1] (posterior responsibilities are fine);
/// `weights` are per-row observation weights. The returned coefficients
/// include whatever columns the caller put in `x` (intercept first, by
/// convention). Separation is handled by the ridge: all-one-class data
/// converges to a bounded solution instead of diverging.
pub fn logistic_irls(
    x: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    ridge: f64,
    max_iter: usize,
    tol: f64,
) -> Result<DVector<f64>> {
    check_rows(x, y, weights)?;
    let n = x.nrows();
    let d = x.ncols();
    let mut beta = DVector::<f64>::zeros(d);
    let mut working_w = vec![0.0; n];
    let mut z = vec![0.0; n];
    for _ in 0..max_iter {
        for i in 0..n {
            let eta = (x.row(i) * &beta)[0].clamp(-ETA_CLAMP, ETA_CLAMP);
            let p = sigmoid(eta);
            let v = (p * (1.0 - p)).max(1e-10);
            working_w[i] = weights[i] * v;
            z[i] = eta + (y[i] - p) / v;
        }
        let next = weighted_ridge_solve(x, &working_w, &z, ridge)?;
        let delta = (&next - &beta).amax();
        beta = next;
        if delta < tol {
            break;
        }
    }
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoConvergence("logistic IRLS produced non-finite coefficients"));
    }
    Ok(beta)
}

/// Weighted regression with log link for a positive mean: E[y | x] = exp(x'c),
/// scored under the exponential log-likelihood sum w_i (-log m_i - y_i / m_i).
///
/// Used to fit the per-group rate surfaces (the mean is the reciprocal rate).
pub fn loglink_fit(
    x: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    ridge: f64,
    max_iter: usize,
    tol: f64,
) -> Result<DVector<f64>> {
    check_rows(x, y, weights)?;
    if y.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidParameter(
            "log-link responses must be positive".into(),
        ));
    }
    let n = x.nrows();
    let d = x.ncols();
    let mut coef = DVector::<f64>::zeros(d);
    // start from the weighted mean so the first step is well-scaled
    let wsum: f64 = weights.iter().sum();
    if wsum > 0.0 {
        let mean = y
            .iter()
            .zip(weights)
            .map(|(yi, wi)| yi * wi)
            .sum::<f64>()
            / wsum;
        coef[0] = mean.max(1e-10).ln().clamp(-23.0, 23.0);
    }
    let mut working_w = vec![0.0; n];
    let mut z = vec![0.0; n];
    for _ in 0..max_iter {
        for i in 0..n {
            let eta = (x.row(i) * &coef)[0].clamp(-23.0, 23.0);
            let m = eta.exp();
            // Fisher scoring: information weight w_i, working response
            // eta + (y/m - 1)
            working_w[i] = weights[i];
            z[i] = eta + (y[i] / m - 1.0);
        }
        let next = weighted_ridge_solve(x, &working_w, &z, ridge)?;
        let delta = (&next - &coef).amax();
        coef = next;
        for v in coef.iter_mut() {
            *v = v.clamp(-1e3, 1e3);
        }
        if delta < tol {
            break;
        }
    }
    if coef.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoConvergence("log-link fit produced non-finite coefficients"));
    }
    Ok(coef)
}

/// Weighted ridge least squares (used by the spline regressor).
pub fn weighted_least_squares(
    x: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    ridge: f64,
) -> Result<DVector<f64>> {
    check_rows(x, y, weights)?;
    weighted_ridge_solve(x, weights, y, ridge)
}
