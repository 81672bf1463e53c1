//! Bayesian two-group filter: a mixture model over null/non-null statistics
//! with a point mass at zero, fit by EM on the partially revealed data, and
//! an ordering rule that discloses the hypothesis least likely to be a
//! positively-signed non-null.

use nalgebra::DMatrix;
use rand_chacha::ChaCha12Rng;

use crate::engine::FilterContext;
use crate::error::{Error, Result};
use crate::filters::{vanilla_next, OrderingFilter, RevealRule};
use crate::forest::RandomForestModel;
use crate::glm::{
    logistic_irls, loglink_fit, sigmoid, softplus, weighted_least_squares, DEFAULT_RIDGE,
    IRLS_TOL, MAX_IRLS_ITER,
};
use crate::spline::{SplineBasis, DEFAULT_INTERIOR_KNOTS};
use crate::statistic::{SideInfoMatrix, StatisticVector};

/// Probability / rate clipping bound used throughout the mixture model.
pub const CLIP_EPS: f64 = 1e-10;

/// Neutral response value used when a group's posterior mass vanishes.
const YBAR_GUARD: f64 = 1.4426950408889634; // 1 / ln 2

const YBAR_MIN: f64 = 1e-10;
const YBAR_MAX: f64 = 1e10;

fn clip_nu(v: f64) -> f64 {
    v.clamp(CLIP_EPS, 1.0 - CLIP_EPS)
}

fn clip_beta(v: f64) -> f64 {
    v.clamp(CLIP_EPS, 1.0 / CLIP_EPS)
}

/// Parameters of the two-group model: point masses (delta0, delta1) and the
/// per-hypothesis values of nu(U_j), beta0(U_j), beta1(U_j). Functions are
/// cached at the side-info rows, which is the only place they are ever
/// evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoGroupParams {
    pub delta0: f64,
    pub delta1: f64,
    pub nu: Vec<f64>,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
}

impl TwoGroupParams {
    pub fn new(
        delta0: f64,
        delta1: f64,
        nu: Vec<f64>,
        beta0: Vec<f64>,
        beta1: Vec<f64>,
    ) -> Result<Self> {
        if nu.len() != beta0.len() || nu.len() != beta1.len() || nu.is_empty() {
            return Err(Error::DimensionMismatch(
                "two-group parameter vectors must share one length".into(),
            ));
        }
        if !(0.0..=1.0).contains(&delta0) || !(0.0..=1.0).contains(&delta1) {
            return Err(Error::InvalidParameter(
                "point masses must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            delta0,
            delta1,
            nu: nu.into_iter().map(clip_nu).collect(),
            beta0: beta0.into_iter().map(clip_beta).collect(),
            beta1: beta1.into_iter().map(clip_beta).collect(),
        })
    }

    /// Constant-function parameters (every row shares nu / beta values).
    pub fn constant(p: usize, nu: f64, delta0: f64, delta1: f64, beta0: f64, beta1: f64) -> Self {
        Self::new(
            delta0,
            delta1,
            vec![nu; p],
            vec![beta0; p],
            vec![beta1; p],
        )
        .expect("constant parameters are valid by construction")
    }

    pub fn p(&self) -> usize {
        self.nu.len()
    }
}

/// Log of the continuous branch beta * e^{beta w} / (1 + e^w)^{beta + 1};
/// stable up to |w| around 1e4.
fn log_density_continuous(w: f64, beta: f64) -> f64 {
    beta.ln() + beta * w - (beta + 1.0) * softplus(w)
}

/// Mixture component density: delta at w = 0, otherwise the continuous
/// branch scaled by (1 - delta). `beta` is the rate already evaluated at
/// the hypothesis' side information.
pub fn two_group_density(w: f64, delta: f64, beta: f64) -> f64 {
    if w == 0.0 {
        delta
    } else {
        (1.0 - delta) * log_density_continuous(w, beta).exp()
    }
}

/// Posterior quantities of one E-step. `hbar[j]` is P(H_j = 1 | observed),
/// `ybar0` / `ybar1` are the conditional response means fed to the rate
/// regressions (guarded to stay positive and finite).
#[derive(Debug, Clone)]
pub struct EStepOutput {
    pub hbar: Vec<f64>,
    pub ybar0: Vec<f64>,
    pub ybar1: Vec<f64>,
}

/// Four-term posterior pieces for an unexamined hypothesis with |W| = m > 0:
/// joint weights of (H, sign) on the log scale, normalized by their max so
/// tails up to |W| = 1e4 stay representable.
struct FourTerm {
    a1p: f64,
    a1m: f64,
    a0p: f64,
    a0m: f64,
    z: f64,
}

fn four_term(m: f64, nu: f64, delta0: f64, delta1: f64, beta0: f64, beta1: f64) -> Option<FourTerm> {
    // priors are clipped away from 0, and ln(1 - delta) = -inf at delta = 1
    // falls out of the max below, so plain IEEE arithmetic handles the edges
    let lp = |prior: f64, delta: f64, beta: f64, w: f64| -> f64 {
        prior.ln() + (1.0 - delta).ln() + log_density_continuous(w, beta)
    };
    let l1p = lp(nu, delta1, beta1, m);
    let l1m = lp(nu, delta1, beta1, -m);
    let l0p = lp(1.0 - nu, delta0, beta0, m);
    let l0m = lp(1.0 - nu, delta0, beta0, -m);
    let mx = l1p.max(l1m).max(l0p).max(l0m);
    if !mx.is_finite() {
        return None;
    }
    let a1p = (l1p - mx).exp();
    let a1m = (l1m - mx).exp();
    let a0p = (l0p - mx).exp();
    let a0m = (l0m - mx).exp();
    let z = a1p + a1m + a0p + a0m;
    if z <= 0.0 || !z.is_finite() {
        return None;
    }
    Some(FourTerm {
        a1p,
        a1m,
        a0p,
        a0m,
        z,
    })
}

/// E-step over all hypotheses. Revealed rows condition on the full W_j
/// (sign times magnitude); unexamined rows condition on |W_j| only, summing
/// both signs; rows with W_j = 0 use the point-mass posterior.
pub fn e_step(
    magnitudes: &[f64],
    revealed: &[(usize, i8)],
    params: &TwoGroupParams,
) -> EStepOutput {
    let p = magnitudes.len();
    debug_assert_eq!(params.p(), p);
    let mut revealed_sign: Vec<Option<i8>> = vec![None; p];
    for &(j, s) in revealed {
        revealed_sign[j] = Some(s);
    }
    let mut hbar = vec![0.0; p];
    let mut ybar0 = vec![YBAR_GUARD; p];
    let mut ybar1 = vec![YBAR_GUARD; p];
    for j in 0..p {
        let m = magnitudes[j];
        let nu = params.nu[j];
        let (b0, b1) = (params.beta0[j], params.beta1[j]);
        let w_is_zero = m == 0.0;
        if w_is_zero {
            // W_j = 0 is observed exactly whether or not the sign was
            // disclosed: point-mass posterior, response fixed at ln 2
            let num = nu * params.delta1;
            let den = num + (1.0 - nu) * params.delta0;
            hbar[j] = if den < CLIP_EPS { nu } else { num / den };
            let y0 = std::f64::consts::LN_2;
            ybar1[j] = if hbar[j] < CLIP_EPS { YBAR_GUARD } else { y0 };
            ybar0[j] = if 1.0 - hbar[j] < CLIP_EPS {
                YBAR_GUARD
            } else {
                y0
            };
            continue;
        }
        match revealed_sign[j] {
            Some(s) => {
                let w = f64::from(s) * m;
                if w == 0.0 {
                    // inconsistent context (zero sign, nonzero magnitude):
                    // treat as the point-mass case above
                    let num = nu * params.delta1;
                    let den = num + (1.0 - nu) * params.delta0;
                    hbar[j] = if den < CLIP_EPS { nu } else { num / den };
                    continue;
                }
                let l1 = (1.0 - params.delta1).ln() + log_density_continuous(w, b1);
                let l0 = (1.0 - params.delta0).ln() + log_density_continuous(w, b0);
                let mx = l1.max(l0);
                let h = if mx.is_finite() {
                    let e1 = nu * (l1 - mx).exp();
                    let e0 = (1.0 - nu) * (l0 - mx).exp();
                    if e1 + e0 < CLIP_EPS {
                        nu
                    } else {
                        e1 / (e1 + e0)
                    }
                } else {
                    nu
                };
                hbar[j] = h;
                let y = softplus(-w).clamp(YBAR_MIN, YBAR_MAX);
                ybar1[j] = if h < CLIP_EPS { YBAR_GUARD } else { y };
                ybar0[j] = if 1.0 - h < CLIP_EPS { YBAR_GUARD } else { y };
            }
            None => {
                let Some(ft) = four_term(m, nu, params.delta0, params.delta1, b0, b1) else {
                    hbar[j] = nu;
                    continue;
                };
                let h = ((ft.a1p + ft.a1m) / ft.z).clamp(0.0, 1.0);
                hbar[j] = h;
                let y_plus = softplus(-m); // response when the hidden sign is +
                let y_minus = softplus(m); // response when the hidden sign is -
                let eyh = (y_plus * ft.a1p + y_minus * ft.a1m) / ft.z;
                let eyh0 = (y_plus * ft.a0p + y_minus * ft.a0m) / ft.z;
                ybar1[j] = if h < CLIP_EPS {
                    YBAR_GUARD
                } else {
                    (eyh / h).clamp(YBAR_MIN, YBAR_MAX)
                };
                ybar0[j] = if 1.0 - h < CLIP_EPS {
                    YBAR_GUARD
                } else {
                    (eyh0 / (1.0 - h)).clamp(YBAR_MIN, YBAR_MAX)
                };
            }
        }
    }
    EStepOutput {
        hbar,
        ybar0,
        ybar1,
    }
}

/// Closed-form update of the point masses. A group whose total posterior
/// weight vanishes keeps its previous value.
pub fn m_step_delta(hbar: &[f64], magnitudes: &[f64], previous: (f64, f64)) -> (f64, f64) {
    let mut num0 = 0.0;
    let mut den0 = 0.0;
    let mut num1 = 0.0;
    let mut den1 = 0.0;
    for (h, m) in hbar.iter().zip(magnitudes) {
        let zero = if *m == 0.0 { 1.0 } else { 0.0 };
        num0 += (1.0 - h) * zero;
        den0 += 1.0 - h;
        num1 += h * zero;
        den1 += h;
    }
    let d0 = if den0 < CLIP_EPS {
        previous.0
    } else {
        num0 / den0
    };
    let d1 = if den1 < CLIP_EPS {
        previous.1
    } else {
        num1 / den1
    };
    (d0, d1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressorKind {
    Glm,
    SplineGam,
    RandomForest,
}

fn side_info_columns(u: &SideInfoMatrix) -> Vec<Vec<f64>> {
    let mut cols = vec![Vec::with_capacity(u.nrows()); u.ncols()];
    for r in 0..u.nrows() {
        for (c, v) in u.row(r).iter().enumerate() {
            cols[c].push(*v);
        }
    }
    cols
}

fn design_with_intercept(u: &SideInfoMatrix, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), u.ncols() + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            u.row(rows[i])[j - 1]
        }
    })
}

/// Regression M-step: refit nu on all rows and each group's rate on the
/// nonzero-statistic rows, with the appropriate posterior weights. Any fit
/// with fewer than 2 usable rows (or vanishing total weight) retains the
/// previous parameter.
pub fn m_step_regression(
    estep: &EStepOutput,
    magnitudes: &[f64],
    u: &SideInfoMatrix,
    regressor: RegressorKind,
    previous: &TwoGroupParams,
    rng: &mut ChaCha12Rng,
) -> Result<TwoGroupParams> {
    let p = magnitudes.len();
    let all_rows: Vec<usize> = (0..p).collect();
    let nonzero_rows: Vec<usize> = (0..p).filter(|&j| magnitudes[j] != 0.0).collect();

    let nu = fit_nu(estep, u, regressor, &all_rows, rng)?;
    let beta1 = fit_beta(
        &estep.ybar1,
        &estep.hbar,
        true,
        u,
        regressor,
        &nonzero_rows,
        &previous.beta1,
        rng,
    )?;
    let beta0 = fit_beta(
        &estep.ybar0,
        &estep.hbar,
        false,
        u,
        regressor,
        &nonzero_rows,
        &previous.beta0,
        rng,
    )?;
    TwoGroupParams::new(previous.delta0, previous.delta1, nu, beta0, beta1)
}

fn fit_nu(
    estep: &EStepOutput,
    u: &SideInfoMatrix,
    regressor: RegressorKind,
    rows: &[usize],
    rng: &mut ChaCha12Rng,
) -> Result<Vec<f64>> {
    let p = rows.len();
    match regressor {
        RegressorKind::Glm => {
            if u.ncols() == 0 {
                // intercept-only: the exact maximizer is the mean posterior
                let mean = estep.hbar.iter().sum::<f64>() / p as f64;
                return Ok(vec![clip_nu(mean); p]);
            }
            let x = design_with_intercept(u, rows);
            let coef = logistic_irls(
                &x,
                &estep.hbar,
                &vec![1.0; p],
                DEFAULT_RIDGE,
                MAX_IRLS_ITER,
                IRLS_TOL,
            )?;
            Ok((0..p)
                .map(|i| clip_nu(sigmoid((x.row(i) * &coef)[0])))
                .collect())
        }
        RegressorKind::SplineGam => {
            let cols = side_info_columns(u);
            if cols.is_empty() {
                let mean = estep.hbar.iter().sum::<f64>() / p as f64;
                return Ok(vec![clip_nu(mean); p]);
            }
            let basis = SplineBasis::from_quantiles(&cols, DEFAULT_INTERIOR_KNOTS)?;
            let x = basis.design(&cols)?;
            let logits: Vec<f64> = estep.hbar.iter().map(|&h| logit(clip_nu(h))).collect();
            let coef = weighted_least_squares(&x, &logits, &vec![1.0; p], DEFAULT_RIDGE)?;
            let fitted = x * coef;
            Ok(fitted.iter().map(|&eta| clip_nu(sigmoid(eta))).collect())
        }
        RegressorKind::RandomForest => {
            let feats: Vec<Vec<f64>> = rows.iter().map(|&j| u.row(j).to_vec()).collect();
            let model = RandomForestModel::fit(&feats, &estep.hbar, rng)?;
            Ok(feats.iter().map(|f| clip_nu(model.predict(f))).collect())
        }
    }
}

fn logit(v: f64) -> f64 {
    (v / (1.0 - v)).ln()
}

#[allow(clippy::too_many_arguments)]
fn fit_beta(
    ybar: &[f64],
    hbar: &[f64],
    group_one: bool,
    u: &SideInfoMatrix,
    regressor: RegressorKind,
    nonzero_rows: &[usize],
    previous: &[f64],
    rng: &mut ChaCha12Rng,
) -> Result<Vec<f64>> {
    let p = ybar.len();
    if nonzero_rows.len() < 2 {
        return Ok(previous.to_vec());
    }
    let weight = |j: usize| if group_one { hbar[j] } else { 1.0 - hbar[j] };
    let wsum: f64 = nonzero_rows.iter().map(|&j| weight(j)).sum();
    if wsum < CLIP_EPS {
        return Ok(previous.to_vec());
    }
    let responses: Vec<f64> = nonzero_rows.iter().map(|&j| ybar[j]).collect();
    match regressor {
        RegressorKind::Glm => {
            if u.ncols() == 0 {
                // exact weighted maximizer: rate = total weight over
                // weighted response mass
                let wy: f64 = nonzero_rows.iter().map(|&j| weight(j) * ybar[j]).sum();
                if wy < CLIP_EPS {
                    return Ok(previous.to_vec());
                }
                return Ok(vec![clip_beta(wsum / wy); p]);
            }
            let x = design_with_intercept(u, nonzero_rows);
            let weights: Vec<f64> = nonzero_rows.iter().map(|&j| weight(j)).collect();
            let coef = loglink_fit(
                &x,
                &responses,
                &weights,
                DEFAULT_RIDGE,
                MAX_IRLS_ITER,
                IRLS_TOL,
            )?;
            let full = design_with_intercept(u, &(0..p).collect::<Vec<_>>());
            Ok((0..p)
                .map(|i| {
                    let mean = (full.row(i) * &coef)[0].clamp(-23.0, 23.0).exp();
                    clip_beta(1.0 / mean.max(CLIP_EPS))
                })
                .collect())
        }
        RegressorKind::SplineGam => {
            let cols = side_info_columns(u);
            if cols.is_empty() {
                let wy: f64 = nonzero_rows.iter().map(|&j| weight(j) * ybar[j]).sum();
                if wy < CLIP_EPS {
                    return Ok(previous.to_vec());
                }
                return Ok(vec![clip_beta(wsum / wy); p]);
            }
            let train_cols: Vec<Vec<f64>> = cols
                .iter()
                .map(|c| nonzero_rows.iter().map(|&j| c[j]).collect())
                .collect();
            let basis = SplineBasis::from_quantiles(&train_cols, DEFAULT_INTERIOR_KNOTS)?;
            let x = basis.design(&train_cols)?;
            let weights: Vec<f64> = nonzero_rows.iter().map(|&j| weight(j)).collect();
            let coef = weighted_least_squares(&x, &responses, &weights, DEFAULT_RIDGE)?;
            let full = basis.design(&cols)?;
            let fitted = full * coef;
            Ok(fitted
                .iter()
                .map(|&m| clip_beta(1.0 / m.clamp(CLIP_EPS, YBAR_MAX)))
                .collect())
        }
        RegressorKind::RandomForest => {
            let feats: Vec<Vec<f64>> = nonzero_rows.iter().map(|&j| u.row(j).to_vec()).collect();
            let model = RandomForestModel::fit(&feats, &responses, rng)?;
            Ok((0..p)
                .map(|j| {
                    let m = model.predict(u.row(j)).clamp(CLIP_EPS, YBAR_MAX);
                    clip_beta(1.0 / m)
                })
                .collect())
        }
    }
}

/// Rough starting parameters from the statistic vector and the warm-start
/// disclosure. `revealed` lists the indices already disclosed.
pub fn em_initialize(
    w: &StatisticVector,
    revealed: &[usize],
    u: &SideInfoMatrix,
) -> Result<TwoGroupParams> {
    let p = w.len();
    if u.nrows() != p {
        return Err(Error::DimensionMismatch(
            "side info rows must match statistic length".into(),
        ));
    }
    let n_pos = (0..p).filter(|&j| w.sign(j) == 1).count() as f64;
    let n_nonpos = p as f64 - n_pos;
    let n_zero = (0..p).filter(|&j| w.sign(j) == 0).count() as f64;
    let nu = n_pos / p as f64;
    let delta0 = (n_nonpos / p as f64) * (n_zero / p as f64);
    let delta1 = (n_pos / p as f64) * (n_zero / p as f64);
    let rev_neg: Vec<f64> = revealed
        .iter()
        .map(|&j| w.value(j))
        .filter(|&v| v < 0.0)
        .collect();
    let rev_pos: Vec<f64> = revealed
        .iter()
        .map(|&j| w.value(j))
        .filter(|&v| v > 0.0)
        .collect();
    let beta0 = beta_from_mean(&rev_neg);
    let beta1 = beta_from_mean(&rev_pos);
    Ok(TwoGroupParams::constant(p, nu, delta0, delta1, beta0, beta1))
}

/// 1 / [log(1 + e^{mean}) - mean], the documented fallback 1/ln 2 when the
/// subset is empty.
fn beta_from_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return YBAR_GUARD;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    clip_beta(1.0 / softplus(-mean).max(CLIP_EPS))
}

/// Initialization a filter can legally perform: counts that would need
/// unexamined signs are replaced by their fair-coin expectation (each
/// undisclosed nonzero statistic contributes half a positive and half a
/// negative). Rate guesses only ever used revealed rows, so they carry over
/// unchanged.
fn em_initialize_censored(ctx: &FilterContext<'_>) -> TwoGroupParams {
    let p = ctx.p();
    let mut rev_pos = 0.0;
    let mut rev_nonpos = 0.0;
    let mut neg_vals = Vec::new();
    let mut pos_vals = Vec::new();
    for &(j, s) in ctx.revealed() {
        let wv = f64::from(s) * ctx.magnitude(j);
        match s {
            1 => {
                rev_pos += 1.0;
                pos_vals.push(wv);
            }
            _ => {
                rev_nonpos += 1.0;
                if s == -1 {
                    neg_vals.push(wv);
                }
            }
        }
    }
    let mut unex_nonzero = 0.0;
    let mut n_zero = 0.0;
    for &j in ctx.unexamined() {
        if ctx.magnitude(j) == 0.0 {
            n_zero += 1.0;
        } else {
            unex_nonzero += 1.0;
        }
    }
    for &(j, _) in ctx.revealed() {
        if ctx.magnitude(j) == 0.0 {
            n_zero += 1.0;
        }
    }
    let exp_pos = rev_pos + 0.5 * unex_nonzero;
    let exp_nonpos = rev_nonpos + 0.5 * unex_nonzero;
    let pf = p as f64;
    let nu = exp_pos / pf;
    let delta0 = (exp_nonpos / pf) * (n_zero / pf);
    let delta1 = (exp_pos / pf) * (n_zero / pf);
    TwoGroupParams::constant(
        p,
        nu,
        delta0,
        delta1,
        beta_from_mean(&neg_vals),
        beta_from_mean(&pos_vals),
    )
}

/// Reveal score: 1 - P(H_j = 1 and sign(W_j) = + | |W_j|, U_j). Zero
/// statistics score exactly 1 and therefore surface first. Returns the
/// argmax over the unexamined set, ties by smallest index.
pub fn bayes_next(ctx: &FilterContext<'_>, params: &TwoGroupParams) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &j in ctx.unexamined() {
        let m = ctx.magnitude(j);
        let score = if m == 0.0 {
            1.0
        } else {
            match four_term(
                m,
                params.nu[j],
                params.delta0,
                params.delta1,
                params.beta0[j],
                params.beta1[j],
            ) {
                Some(ft) => 1.0 - ft.a1p / ft.z,
                None => 1.0,
            }
        };
        match best {
            Some((_, bs)) if score <= bs => {}
            _ => best = Some((j, score)),
        }
    }
    best.map(|(j, _)| j).ok_or(Error::EmptyInput("unexamined set"))
}

/// The sequential two-group filter: vanilla warm start, then alternate
/// EM refits (every `refit_every` reveals, `em_iters` sweeps each) with
/// Bayesian reveal scores.
pub struct TwoGroupFilter {
    regressor: RegressorKind,
    reveal_rule: RevealRule,
    refit_every: usize,
    em_iters: usize,
    params: Option<TwoGroupParams>,
    fitted_at: usize,
}

impl TwoGroupFilter {
    pub fn new(regressor: RegressorKind, reveal_rule: RevealRule, refit_every: usize) -> Self {
        Self {
            regressor,
            reveal_rule,
            refit_every: refit_every.max(1),
            em_iters: 1,
            params: None,
            fitted_at: 0,
        }
    }

    pub fn with_em_iters(mut self, iters: usize) -> Self {
        self.em_iters = iters.max(1);
        self
    }

    /// One E/M sweep given the current context.
    fn em_sweep(&self, ctx: &mut FilterContext<'_>, params: TwoGroupParams) -> Result<TwoGroupParams> {
        let estep = e_step(ctx.magnitudes(), ctx.revealed(), &params);
        let (d0, d1) = m_step_delta(
            &estep.hbar,
            ctx.magnitudes(),
            (params.delta0, params.delta1),
        );
        let magnitudes = ctx.magnitudes().to_vec();
        let side_info = ctx.side_info().clone();
        let mut refit = m_step_regression(
            &estep,
            &magnitudes,
            &side_info,
            self.regressor,
            &params,
            ctx.rng(),
        )?;
        refit.delta0 = d0;
        refit.delta1 = d1;
        Ok(refit)
    }
}

impl OrderingFilter for TwoGroupFilter {
    fn next_index(&mut self, ctx: &mut FilterContext<'_>) -> Result<usize> {
        let n_revealed = ctx.revealed().len();
        if self.reveal_rule.in_warmup(ctx.magnitudes(), n_revealed) {
            return vanilla_next(ctx);
        }
        let stale = match self.params {
            None => true,
            Some(_) => n_revealed >= self.fitted_at + self.refit_every,
        };
        if stale {
            let mut params = match self.params.take() {
                Some(p) => p,
                None => em_initialize_censored(ctx),
            };
            for _ in 0..self.em_iters {
                params = self.em_sweep(ctx, params)?;
            }
            self.params = Some(params);
            self.fitted_at = n_revealed;
        }
        bayes_next(ctx, self.params.as_ref().expect("params fitted above"))
    }

    fn reset(&mut self) {
        self.params = None;
        self.fitted_at = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain, stream_rng};

    #[test]
    fn density_point_mass_and_logistic_shape() {
        assert_eq!(two_group_density(0.0, 0.3, 2.0), 0.3);
        // beta = 1 is the logistic density e^w / (1 + e^w)^2
        let d = two_group_density(1e-9, 0.0, 1.0);
        assert!((d - 0.25).abs() < 1e-6);
        let d2 = two_group_density(2.0, 0.0, 1.0);
        let expected = 2.0f64.exp() / (1.0 + 2.0f64.exp()).powi(2);
        assert!((d2 - expected).abs() < 1e-12);
    }

    #[test]
    fn continuous_branch_integrates_to_one_minus_delta() {
        // Simpson's rule over [-40, 40]; the grid hits w = 0, where the
        // mixed density jumps to the point mass, so integrate the
        // continuous branch itself
        for beta in [0.5, 1.0, 3.0] {
            let delta = 0.3;
            let (a, b, n) = (-40.0, 40.0, 16_000);
            let h = (b - a) / n as f64;
            let f = |w: f64| (1.0 - delta) * log_density_continuous(w, beta).exp();
            let mut total = f(a) + f(b);
            for i in 1..n {
                let w = a + i as f64 * h;
                total += f(w) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            total *= h / 3.0;
            assert!(
                (total - (1.0 - delta)).abs() < 1e-6,
                "beta {beta}: integral {total}"
            );
            // away from zero the mixed density is exactly the weighted
            // continuous branch
            assert!((two_group_density(1.3, delta, beta) - f(1.3)).abs() < 1e-15);
        }
    }

    #[test]
    fn density_is_stable_at_extreme_w() {
        for &w in &[-1e4, -30.0, 30.0, 1e4] {
            let d = two_group_density(w, 0.1, 3.0);
            assert!(d.is_finite() && d >= 0.0, "w={w} gave {d}");
        }
    }

    fn mixed_context_parts() -> (Vec<f64>, Vec<(usize, i8)>) {
        // p = 6: revealed {0:+, 1:-, 2: zero}, unexamined {3, 4, 5 (zero)}
        let magnitudes = vec![1.2, 0.7, 0.0, 2.0, 0.4, 0.0];
        let revealed = vec![(0usize, 1i8), (1, -1), (2, 0)];
        (magnitudes, revealed)
    }

    #[test]
    fn symmetric_groups_give_half() {
        let (mags, revealed) = mixed_context_parts();
        let params = TwoGroupParams::constant(6, 0.5, 0.2, 0.2, 1.7, 1.7);
        let out = e_step(&mags, &revealed, &params);
        for (j, h) in out.hbar.iter().enumerate() {
            assert!((h - 0.5).abs() < 1e-12, "row {j}: {h}");
        }
    }

    #[test]
    fn zero_statistic_posterior() {
        let params = TwoGroupParams::constant(1, 0.3, 0.1, 0.2, 1.0, 3.0);
        let out = e_step(&[0.0], &[], &params);
        let expect = 0.3 * 0.2 / (0.3 * 0.2 + 0.7 * 0.1);
        assert!((out.hbar[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn estep_outputs_lie_in_range() {
        let (mags, revealed) = mixed_context_parts();
        let params = TwoGroupParams::constant(6, 0.25, 0.05, 0.1, 0.8, 2.5);
        let out = e_step(&mags, &revealed, &params);
        for j in 0..6 {
            assert!((0.0..=1.0).contains(&out.hbar[j]));
            assert!(out.ybar0[j] > 0.0 && out.ybar0[j].is_finite());
            assert!(out.ybar1[j] > 0.0 && out.ybar1[j].is_finite());
        }
    }

    #[test]
    fn revealed_rows_have_ybar_equal_to_response() {
        let params = TwoGroupParams::constant(2, 0.4, 0.0, 0.0, 1.0, 2.0);
        let out = e_step(&[1.5, 0.9], &[(0, 1), (1, -1)], &params);
        assert!((out.ybar1[0] - softplus(-1.5)).abs() < 1e-12);
        assert!((out.ybar0[0] - softplus(-1.5)).abs() < 1e-12);
        assert!((out.ybar1[1] - softplus(0.9)).abs() < 1e-12);
    }

    #[test]
    fn delta_update_examples() {
        // all posterior mass in group 1: delta1 = 2/3, delta0 retained
        let (d0, d1) = m_step_delta(&[1.0, 1.0, 1.0], &[0.0, 1.0, 0.0], (0.42, 0.9));
        assert_eq!(d0, 0.42);
        assert!((d1 - 2.0 / 3.0).abs() < 1e-12);

        let (d0, d1) = m_step_delta(&[0.5, 0.5], &[0.0, 1.0], (0.0, 0.0));
        assert!((d0 - 0.5).abs() < 1e-12);
        assert!((d1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_responses_recover_constants() {
        let p = 30;
        let u = SideInfoMatrix::empty(p);
        let estep = EStepOutput {
            hbar: vec![0.37; p],
            ybar0: vec![0.5; p],
            ybar1: vec![0.25; p],
        };
        let mags: Vec<f64> = (0..p).map(|j| 0.1 + j as f64).collect();
        let prev = TwoGroupParams::constant(p, 0.5, 0.0, 0.0, 1.0, 1.0);
        let mut rng = stream_rng(0, domain::TEST, 0);
        for reg in [
            RegressorKind::Glm,
            RegressorKind::RandomForest,
        ] {
            let fit =
                m_step_regression(&estep, &mags, &u, reg, &prev, &mut rng).unwrap();
            assert!((fit.nu[0] - 0.37).abs() < 1e-9, "{reg:?} nu {}", fit.nu[0]);
            assert!(
                (fit.beta1[0] - 4.0).abs() < 1e-9,
                "{reg:?} beta1 {}",
                fit.beta1[0]
            );
            assert!(
                (fit.beta0[0] - 2.0).abs() < 1e-9,
                "{reg:?} beta0 {}",
                fit.beta0[0]
            );
        }
    }

    #[test]
    fn too_few_rows_retain_previous_beta() {
        let p = 3;
        let u = SideInfoMatrix::empty(p);
        let estep = EStepOutput {
            hbar: vec![0.5; p],
            ybar0: vec![0.7; p],
            ybar1: vec![0.7; p],
        };
        // only one nonzero statistic
        let mags = vec![0.0, 0.0, 1.0];
        let prev = TwoGroupParams::constant(p, 0.5, 0.1, 0.1, 2.2, 3.3);
        let mut rng = stream_rng(0, domain::TEST, 0);
        let fit = m_step_regression(&estep, &mags, &u, RegressorKind::Glm, &prev, &mut rng)
            .unwrap();
        assert_eq!(fit.beta0[0], 2.2);
        assert_eq!(fit.beta1[0], 3.3);
    }

    #[test]
    fn initialize_examples() {
        let w = StatisticVector::new(vec![0.2, -0.4, 0.0, 1.0]).unwrap();
        let u = SideInfoMatrix::empty(4);
        let params = em_initialize(&w, &[1, 2], &u).unwrap();
        assert!((params.nu[0] - 0.5).abs() < 1e-12);
        assert!((params.delta0 - 0.125).abs() < 1e-12);
        assert!((params.delta1 - 0.125).abs() < 1e-12);
        // revealed negatives {-0.4}
        let expect_b0 = 1.0 / softplus(0.4);
        assert!((params.beta0[0] - expect_b0).abs() < 1e-12);
        // no revealed positives
        assert!((params.beta1[0] - YBAR_GUARD).abs() < 1e-12);
    }

    #[test]
    fn initialize_beta_matches_response_at_the_mean() {
        // the rate guess inverts the response transform: at W = -0.4 the
        // response is softplus(0.4), and beta0 = 1 / that value
        let w = StatisticVector::new(vec![-0.4, 0.1]).unwrap();
        let u = SideInfoMatrix::empty(2);
        let params = em_initialize(&w, &[0], &u).unwrap();
        let y = softplus(0.4);
        assert!((params.beta0[0] * y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bayes_next_prefers_zero_statistics() {
        let w = StatisticVector::new(vec![2.0, 0.0, -1.0, 0.5]).unwrap();
        let mags = w.magnitudes();
        let u = SideInfoMatrix::empty(4);
        let params = TwoGroupParams::constant(4, 0.4, 0.1, 0.1, 1.0, 2.0);
        let unexamined = [0usize, 1, 2, 3];
        let mut rng = stream_rng(0, domain::TEST, 0);
        let ctx = FilterContext::new(&mags, &[], &unexamined, &u, &mut rng).unwrap();
        assert_eq!(bayes_next(&ctx, &params).unwrap(), 1);
    }

    #[test]
    fn symmetric_rates_reduce_to_argmin_hbar() {
        // with beta0 = beta1 = 1 and equal deltas the score is 1 - nu/2,
        // so the filter reveals the row with the smallest nu (= Hbar)
        let w = StatisticVector::new(vec![0.7, 1.1, 0.3]).unwrap();
        let mags = w.magnitudes();
        let u = SideInfoMatrix::empty(3);
        let params = TwoGroupParams::new(
            0.05,
            0.05,
            vec![0.6, 0.2, 0.9],
            vec![1.0; 3],
            vec![1.0; 3],
        )
        .unwrap();
        let unexamined = [0usize, 1, 2];
        let mut rng = stream_rng(0, domain::TEST, 0);
        let ctx = FilterContext::new(&mags, &[], &unexamined, &u, &mut rng).unwrap();
        let estep = e_step(&mags, &[], &params);
        assert!((estep.hbar[0] - 0.6).abs() < 1e-12);
        assert_eq!(bayes_next(&ctx, &params).unwrap(), 1);
    }

    #[test]
    fn constant_scores_tie_break_to_smallest_index() {
        let w = StatisticVector::new(vec![0.5, 0.5, 0.5]).unwrap();
        let mags = w.magnitudes();
        let u = SideInfoMatrix::empty(3);
        let params = TwoGroupParams::constant(3, 0.5, 0.0, 0.0, 1.0, 1.0);
        let unexamined = [0usize, 1, 2];
        let mut rng = stream_rng(0, domain::TEST, 0);
        let ctx = FilterContext::new(&mags, &[], &unexamined, &u, &mut rng).unwrap();
        assert_eq!(bayes_next(&ctx, &params).unwrap(), 0);
    }
}
