//! Exact Gaussian model-X knockoffs: the equicorrelated construction, the
//! conditional sampler, and an exchangeability diagnostic.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// The known covariate law N(mean, covariance).
#[derive(Debug, Clone)]
pub struct GaussianModel {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianModel {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        if cov.nrows() != p || cov.ncols() != p || p == 0 {
            return Err(Error::DimensionMismatch(format!(
                "mean has {} entries, covariance is {}x{}",
                p,
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gaussian model"));
        }
        for i in 0..p {
            for j in (i + 1)..p {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { mean, cov })
    }

    /// AR(1) correlation rho^|i-j| with unit variances and zero mean.
    pub fn ar1(p: usize, rho: f64) -> Result<Self> {
        if !(-1.0..1.0).contains(&rho) {
            return Err(Error::InvalidParameter(format!(
                "AR(1) correlation must lie in (-1, 1), got {rho}"
            )));
        }
        let cov = DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()));
        Self::new(DVector::zeros(p), cov)
    }

    pub fn p(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
}

/// Cached operators for sampling knockoffs: x-tilde | x is Gaussian with
/// mean mu + (Sigma - S) Sigma^-1 (x - mu) and covariance 2S - S Sigma^-1 S.
#[derive(Debug, Clone)]
pub struct KnockoffSpec {
    s: DVector<f64>,
    cond_op: DMatrix<f64>,   // (Sigma - S) Sigma^-1
    cond_factor: DMatrix<f64>, // F with F F' = 2S - S Sigma^-1 S
}

/// Equicorrelated s vector: on the correlation scale every coordinate gets
/// min(1, 2 lambda_min) shrunk by 1e-6 to guard the PSD boundary, then maps
/// back through the variances.
pub fn equicorrelated_s(model: &GaussianModel) -> Result<DVector<f64>> {
    let p = model.p();
    let sd: Vec<f64> = (0..p).map(|j| model.cov()[(j, j)].sqrt()).collect();
    let corr = DMatrix::from_fn(p, p, |i, j| model.cov()[(i, j)] / (sd[i] * sd[j]));
    let eig = SymmetricEigen::new(corr);
    let lambda_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if lambda_min < 1e-10 {
        return Err(Error::SingularCovariance(lambda_min));
    }
    let s_corr = (2.0 * lambda_min).min(1.0) * (1.0 - 1e-6);
    Ok(DVector::from_fn(p, |j, _| s_corr * sd[j] * sd[j]))
}

/// Build the cached conditional operators for the given s, verifying that
/// the joint matrix stays PSD.
pub fn knockoff_spec(model: &GaussianModel, s: DVector<f64>) -> Result<KnockoffSpec> {
    let p = model.p();
    if s.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "s has {} entries for p = {p}",
            s.len()
        )));
    }
    if s.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidParameter("s must be nonnegative".into()));
    }
    let chol = Cholesky::new(model.cov().clone())
        .ok_or(Error::SingularCovariance(f64::NAN))?;
    // Sigma^-1 S   (solve column by column of diag(s))
    let mut sinv_s = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        let mut col = DVector::zeros(p);
        col[j] = s[j];
        let solved = chol.solve(&col);
        sinv_s.set_column(j, &solved);
    }
    let cond_op = DMatrix::<f64>::identity(p, p) - &sinv_s.transpose();
    // conditional covariance 2S - S Sigma^-1 S, symmetrized before factoring
    let mut cond_cov = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            cond_cov[(i, j)] = -s[i] * sinv_s[(i, j)];
        }
        cond_cov[(i, i)] += 2.0 * s[i];
    }
    let sym = (&cond_cov + cond_cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut factor = eig.eigenvectors.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        if *lambda < -1e-8 {
            return Err(Error::Factorization(*lambda));
        }
        let scale = lambda.max(0.0).sqrt();
        for i in 0..p {
            factor[(i, j)] *= scale;
        }
    }
    Ok(KnockoffSpec {
        s,
        cond_op,
        cond_factor: factor,
    })
}

impl KnockoffSpec {
    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }

    /// Joint second-moment matrix G = [[Sigma, Sigma - S], [Sigma - S, Sigma]].
    pub fn joint_cov(&self, model: &GaussianModel) -> DMatrix<f64> {
        let p = model.p();
        let mut g = DMatrix::<f64>::zeros(2 * p, 2 * p);
        for i in 0..p {
            for j in 0..p {
                let sigma = model.cov()[(i, j)];
                let off = sigma - if i == j { self.s[i] } else { 0.0 };
                g[(i, j)] = sigma;
                g[(p + i, p + j)] = sigma;
                g[(i, p + j)] = off;
                g[(p + i, j)] = off;
            }
        }
        g
    }
}

/// Draw knockoff rows for the data matrix `x` (n rows, p columns). The
/// normal draws are generated row by row in a fixed order, so the output is
/// a pure function of (x, spec, rng stream).
pub fn sample_knockoffs(
    x: &DMatrix<f64>,
    model: &GaussianModel,
    spec: &KnockoffSpec,
    rng: &mut ChaCha12Rng,
) -> Result<DMatrix<f64>> {
    let p = model.p();
    if x.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "data has {} columns for p = {p}",
            x.ncols()
        )));
    }
    let n = x.nrows();
    let mut z = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            z[(i, j)] = rng.sample(StandardNormal);
        }
    }
    // X-tilde = mu + (Xc) A' + Z F'   with A the conditional-mean operator
    let mut xc = x.clone();
    for i in 0..n {
        for j in 0..p {
            xc[(i, j)] -= model.mean()[j];
        }
    }
    let mut xt = xc * spec.cond_op.transpose() + z * spec.cond_factor.transpose();
    for i in 0..n {
        for j in 0..p {
            xt[(i, j)] += model.mean()[j];
        }
    }
    Ok(xt)
}

/// Largest absolute deviation of the empirical joint second moments of
/// [X, X-tilde] (about the known mean) from the theoretical G. Diagnostic
/// only; selection never reads it.
pub fn swap_diagnostic(
    x: &DMatrix<f64>,
    xtilde: &DMatrix<f64>,
    model: &GaussianModel,
    spec: &KnockoffSpec,
) -> Result<f64> {
    let p = model.p();
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("swap diagnostic data"));
    }
    if xtilde.nrows() != n || x.ncols() != p || xtilde.ncols() != p {
        return Err(Error::DimensionMismatch(
            "swap diagnostic shapes must match".into(),
        ));
    }
    let mut joint = DMatrix::<f64>::zeros(n, 2 * p);
    for i in 0..n {
        for j in 0..p {
            joint[(i, j)] = x[(i, j)] - model.mean()[j];
            joint[(i, p + j)] = xtilde[(i, j)] - model.mean()[j];
        }
    }
    let empirical = joint.transpose() * &joint / n as f64;
    let g = spec.joint_cov(model);
    let mut max_dev: f64 = 0.0;
    for i in 0..2 * p {
        for j in 0..2 * p {
            max_dev = max_dev.max((empirical[(i, j)] - g[(i, j)]).abs());
        }
    }
    Ok(max_dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain, stream_rng};

    #[test]
    fn identity_covariance_gives_s_near_one() {
        let model = GaussianModel::new(DVector::zeros(4), DMatrix::identity(4, 4)).unwrap();
        let s = equicorrelated_s(&model).unwrap();
        for j in 0..4 {
            assert!((s[j] - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn high_correlation_shrinks_s() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]);
        let model = GaussianModel::new(DVector::zeros(2), cov).unwrap();
        let s = equicorrelated_s(&model).unwrap();
        for j in 0..2 {
            assert!((s[j] - 0.2).abs() < 1e-4, "s[{j}] = {}", s[j]);
        }
    }

    #[test]
    fn variances_map_back() {
        // doubling a variance doubles the matching s entry
        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let model = GaussianModel::new(DVector::zeros(2), cov).unwrap();
        let s = equicorrelated_s(&model).unwrap();
        assert!((s[0] / s[1] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn joint_matrix_stays_psd_on_random_spd() {
        let mut rng = stream_rng(7, domain::TEST, 0);
        for trial in 0..5 {
            let p = 8;
            let a = DMatrix::from_fn(p, p, |_, _| {
                rng.sample::<f64, _>(StandardNormal)
            });
            let cov = &a * a.transpose() + DMatrix::<f64>::identity(p, p) * 0.5;
            let model = GaussianModel::new(DVector::zeros(p), cov).unwrap();
            let s = equicorrelated_s(&model).unwrap();
            let spec = knockoff_spec(&model, s).unwrap();
            let g = spec.joint_cov(&model);
            let eig = SymmetricEigen::new(g);
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min >= -1e-8, "trial {trial}: min eigenvalue {min}");
        }
    }

    #[test]
    fn singular_covariance_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let model = GaussianModel::new(DVector::zeros(2), cov).unwrap();
        match equicorrelated_s(&model) {
            Err(Error::SingularCovariance(_)) => {}
            other => panic!("expected singular covariance error, got {other:?}"),
        }
    }

    #[test]
    fn independent_case_has_independent_knockoffs() {
        let p = 5;
        let n = 100_000;
        let model = GaussianModel::new(DVector::zeros(p), DMatrix::identity(p, p)).unwrap();
        let s = equicorrelated_s(&model).unwrap();
        let spec = knockoff_spec(&model, s).unwrap();
        let mut rng = stream_rng(21, domain::TEST, 0);
        let mut x = DMatrix::<f64>::zeros(n, p);
        for i in 0..n {
            for j in 0..p {
                x[(i, j)] = rng.sample(StandardNormal);
            }
        }
        let xt = sample_knockoffs(&x, &model, &spec, &mut rng).unwrap();
        for j in 0..p {
            let mut dot = 0.0;
            for i in 0..n {
                dot += x[(i, j)] * xt[(i, j)];
            }
            let corr = dot / n as f64;
            assert!(corr.abs() < 0.02, "column {j}: corr {corr}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let model = GaussianModel::ar1(6, 0.4).unwrap();
        let s = equicorrelated_s(&model).unwrap();
        let spec = knockoff_spec(&model, s).unwrap();
        let mut data_rng = stream_rng(3, domain::TEST, 1);
        let x = DMatrix::from_fn(1, 6, |_, _| data_rng.sample::<f64, _>(StandardNormal));
        let a = sample_knockoffs(&x, &model, &spec, &mut stream_rng(3, domain::TEST, 2)).unwrap();
        let b = sample_knockoffs(&x, &model, &spec, &mut stream_rng(3, domain::TEST, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_copy_fails_the_diagnostic() {
        let model = GaussianModel::ar1(4, 0.3).unwrap();
        let s = equicorrelated_s(&model).unwrap();
        let min_s = s.iter().cloned().fold(f64::INFINITY, f64::min);
        let spec = knockoff_spec(&model, s).unwrap();
        let mut rng = stream_rng(9, domain::TEST, 0);
        let n = 50_000;
        let mut x = DMatrix::<f64>::zeros(n, 4);
        // sample X from the model via its Cholesky factor
        let chol = Cholesky::new(model.cov().clone()).unwrap();
        let l = chol.l();
        for i in 0..n {
            let z = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal));
            let row = &l * z;
            for j in 0..4 {
                x[(i, j)] = row[j];
            }
        }
        let diag = swap_diagnostic(&x, &x.clone(), &model, &spec).unwrap();
        assert!(
            diag >= min_s - 0.05,
            "identical copy should violate by about min s = {min_s}, got {diag}"
        );
        // correctly sampled knockoffs pass
        let xt = sample_knockoffs(&x, &model, &spec, &mut rng).unwrap();
        let good = swap_diagnostic(&x, &xt, &model, &spec).unwrap();
        assert!(good < 0.05, "diagnostic too large: {good}");
    }

    #[test]
    fn empty_data_is_an_error() {
        let model = GaussianModel::ar1(3, 0.2).unwrap();
        let s = equicorrelated_s(&model).unwrap();
        let spec = knockoff_spec(&model, s).unwrap();
        let x = DMatrix::<f64>::zeros(0, 3);
        assert!(swap_diagnostic(&x, &x.clone(), &model, &spec).is_err());
    }
}
