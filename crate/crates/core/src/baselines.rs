//! P-value comparison methods: two-sided t-test p-values from a
//! multivariate least-squares fit, Benjamini-Hochberg, Storey-calibrated BH,
//! and Adaptive SeqStep over an externally supplied hypothesis order.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Two-sided t-test p-values for the covariate coefficients of an OLS fit
/// with intercept. Requires n > p + 1 residual degrees of freedom.
pub fn ols_pvalues(x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows, response {}",
            n,
            y.len()
        )));
    }
    if n <= p + 1 {
        return Err(Error::PValuesUnavailable { n, p });
    }
    if p == 0 {
        return Ok(Vec::new());
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression inputs"));
    }
    let mut design = DMatrix::zeros(n, p + 1);
    design.column_mut(0).fill(1.0);
    design.view_mut((0, 1), (n, p)).copy_from(x);
    let yv = DVector::from_column_slice(y);
    let xtx = design.transpose() * &design;
    let chol = xtx.clone().cholesky().ok_or(Error::RankDeficient)?;
    let xty = design.transpose() * &yv;
    let coef = chol.solve(&xty);
    let resid = &yv - &design * &coef;
    let dof = (n - p - 1) as f64;
    let sigma2 = resid.norm_squared() / dof;
    let xtx_inv = chol.inverse();
    let tdist = StudentsT::new(0.0, 1.0, dof)
        .map_err(|_| Error::InvalidParameter("t distribution degrees of freedom".into()))?;
    let mut pvals = Vec::with_capacity(p);
    for j in 1..=p {
        let var = sigma2 * xtx_inv[(j, j)];
        let se = var.max(0.0).sqrt();
        let pv = if se > 0.0 {
            let t = coef[j] / se;
            2.0 * (1.0 - tdist.cdf(t.abs()))
        } else if coef[j] != 0.0 {
            0.0
        } else {
            1.0
        };
        pvals.push(pv.clamp(0.0, 1.0));
    }
    Ok(pvals)
}

fn validate_pvalues(pvals: &[f64]) -> Result<()> {
    if pvals.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::InvalidParameter(
            "p-values must lie in [0, 1]".into(),
        ));
    }
    Ok(())
}

/// Benjamini-Hochberg step-up: reject the k-hat smallest p-values where
/// k-hat = max{k: p_(k) <= kq/m}. Returns selected indices in ascending
/// order.
pub fn bh(pvals: &[f64], q: f64) -> Result<Vec<usize>> {
    validate_pvalues(pvals)?;
    if !(q.is_finite() && q >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "target level must be a nonnegative real, got {q}"
        )));
    }
    let m = pvals.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]).then(a.cmp(&b)));
    let mut k_hat = 0;
    for (rank, &i) in order.iter().enumerate() {
        if pvals[i] <= (rank + 1) as f64 * q / m as f64 {
            k_hat = rank + 1;
        }
    }
    let mut selected: Vec<usize> = order[..k_hat].to_vec();
    selected.sort_unstable();
    Ok(selected)
}

/// BH with the Storey null-proportion estimate
/// pi0 = min(1, (1 + #{p > tau}) / ((1 - tau) m)) folded into the level.
pub fn storey_bh(pvals: &[f64], q: f64, tau: f64) -> Result<Vec<usize>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tau must lie in (0, 1), got {tau}"
        )));
    }
    validate_pvalues(pvals)?;
    let m = pvals.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let above = pvals.iter().filter(|&&p| p > tau).count();
    let pi0 = ((1 + above) as f64 / ((1.0 - tau) * m as f64)).min(1.0);
    bh(pvals, q / pi0)
}

/// Adaptive SeqStep over p-values already sorted by side information:
/// k-hat = max{k: (s/(1-lambda)) (1 + #{i<=k: p_i > lambda}) /
/// max(1, #{i<=k: p_i <= s}) <= q}, rejecting {i <= k-hat: p_i <= s}.
pub fn adaptive_seqstep(pvals: &[f64], q: f64, lambda: f64, s: f64) -> Result<Vec<usize>> {
    validate_pvalues(pvals)?;
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must lie in (0, 1), got {lambda}"
        )));
    }
    if !(s >= 0.0 && s <= lambda) {
        return Err(Error::InvalidParameter(format!(
            "rejection threshold s = {s} must satisfy 0 <= s <= lambda = {lambda}"
        )));
    }
    if !(q.is_finite() && q >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "target level must be a nonnegative real, got {q}"
        )));
    }
    let mut k_hat = 0;
    let mut above = 0usize;
    let mut rejectable = 0usize;
    for (k, &p) in pvals.iter().enumerate() {
        if p > lambda {
            above += 1;
        }
        if p <= s {
            rejectable += 1;
        }
        let fdp_hat = s / (1.0 - lambda) * (1 + above) as f64 / rejectable.max(1) as f64;
        if fdp_hat <= q {
            k_hat = k + 1;
        }
    }
    Ok((0..k_hat).filter(|&i| pvals[i] <= s).collect())
}
