//! Monte-Carlo experiment driver: configuration, per-trial pipelines
//! (sampling, knockoffs, cross-validated lasso statistics, filters,
//! p-value baselines), and deterministic CSV output.

pub mod design;

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{adaptive_seqstep, bh, ols_pvalues, storey_bh};
use crate::engine::{compute_metrics, run_full_ordering, EstimatorKind};
use crate::error::{Error, Result};
use crate::filters::{
    OrderingFilter, PredictiveFilter, RegressorKind, RevealRule, SignModelKind, TwoGroupFilter,
    VanillaFilter,
};
use crate::knockoff::{equicorrelated_s, knockoff_spec, sample_knockoffs, GaussianModel, KnockoffSpec};
use crate::lasso::{cv_lambda, lasso_fit, lcd_statistic, standardize_columns, Objective};
use crate::rng::{derive_key, domain, stream_rng};
use crate::statistic::SideInfoMatrix;

use self::design::{
    sim1_design, sim1_sample, sim2_geometry, sim2_sample, uniform_design, Sim2Geometry,
    TrialDesign,
};

pub const STOREY_TAU: f64 = 0.5;
pub const SEQSTEP_LAMBDA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    Sim1,
    Sim2,
    CustomGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Vanilla,
    Logistic,
    Gam,
    Rf,
    Em,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Vanilla => "vanilla",
            FilterKind::Logistic => "logistic",
            FilterKind::Gam => "gam",
            FilterKind::Rf => "rf",
            FilterKind::Em => "em",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(FilterKind::Vanilla),
            "logistic" => Ok(FilterKind::Logistic),
            "gam" => Ok(FilterKind::Gam),
            "rf" => Ok(FilterKind::Rf),
            "em" => Ok(FilterKind::Em),
            other => Err(Error::InvalidParameter(format!(
                "unknown filter `{other}` (expected vanilla|logistic|gam|rf|em)"
            ))),
        }
    }
}

/// One configured testing method. Knockoff methods share the per-trial W
/// statistics; p-value methods share the per-trial OLS p-values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodSpec {
    Knockoff(FilterKind),
    Bh,
    StoreyBh,
    SeqStep,
}

impl MethodSpec {
    pub fn parse(name: &str, default_filter: FilterKind) -> Result<Self> {
        match name {
            "knockoff" => Ok(MethodSpec::Knockoff(default_filter)),
            "knockoff_vanilla" => Ok(MethodSpec::Knockoff(FilterKind::Vanilla)),
            "knockoff_logistic" => Ok(MethodSpec::Knockoff(FilterKind::Logistic)),
            "knockoff_gam" => Ok(MethodSpec::Knockoff(FilterKind::Gam)),
            "knockoff_rf" => Ok(MethodSpec::Knockoff(FilterKind::Rf)),
            "knockoff_em" => Ok(MethodSpec::Knockoff(FilterKind::Em)),
            "bh" => Ok(MethodSpec::Bh),
            "storey_bh" => Ok(MethodSpec::StoreyBh),
            "seqstep" => Ok(MethodSpec::SeqStep),
            other => Err(Error::InvalidParameter(format!(
                "unknown method `{other}`"
            ))),
        }
    }

    pub fn label(self) -> String {
        match self {
            MethodSpec::Knockoff(kind) => format!("knockoff_{}", kind.name()),
            MethodSpec::Bh => "bh".into(),
            MethodSpec::StoreyBh => "storey_bh".into(),
            MethodSpec::SeqStep => "seqstep".into(),
        }
    }

    fn is_knockoff(self) -> bool {
        matches!(self, MethodSpec::Knockoff(_))
    }
}

/// Flat experiment description; every field has a default so config files
/// only need to spell out what they change.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub design: DesignKind,
    pub n: usize,
    pub p: usize,
    /// Number of nonzero coefficients (ignored for the grid design, whose
    /// signal set comes from the geometry).
    pub n_signals: usize,
    /// Signals are placed within the first `front` coordinates (decaying
    /// design only).
    pub front: usize,
    /// Signal magnitude; when absent, 3.5/sqrt(n) for linear designs and
    /// 25/sqrt(n) for the grid design.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    /// AR(1) lag correlation of the covariates (linear designs).
    pub rho: f64,
    pub q_grid: Vec<f64>,
    pub n_trials: usize,
    pub methods: Vec<String>,
    /// Filter used by the plain `knockoff` method token.
    pub filter: FilterKind,
    pub estimator: EstimatorKind,
    pub refit_every: usize,
    pub reveal_fraction: f64,
    pub em_iters: usize,
    pub master_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Record wall-clock per method; off by default so identical configs
    /// produce byte-identical CSV.
    pub timings: bool,
}

pub fn default_q_grid() -> Vec<f64> {
    (1..=10).map(|k| 0.03 * k as f64).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            design: DesignKind::Sim1,
            n: 1000,
            p: 900,
            n_signals: 150,
            front: 300,
            amplitude: None,
            rho: 0.5,
            q_grid: default_q_grid(),
            n_trials: 100,
            methods: vec!["knockoff".into()],
            filter: FilterKind::Vanilla,
            estimator: EstimatorKind::Plus,
            refit_every: 1,
            reveal_fraction: 0.1,
            em_iters: 1,
            master_seed: 1,
            output: None,
            timings: false,
        }
    }
}

impl ExperimentConfig {
    /// Native or desk-scale preset for the linear decaying-signal design.
    pub fn sim1(desk: bool) -> Self {
        let mut cfg = Self::default();
        if desk {
            cfg.n = 500;
            cfg.p = 300;
            cfg.n_signals = 50;
            cfg.front = 100;
        }
        cfg
    }

    /// Native or desk-scale preset for the logistic grid design.
    pub fn sim2(desk: bool) -> Self {
        let mut cfg = Self::default();
        cfg.design = DesignKind::Sim2;
        if desk {
            cfg.n = 500;
            cfg.p = 400;
        } else {
            cfg.n = 1000;
            cfg.p = 1600;
        }
        cfg
    }

    pub fn resolved_amplitude(&self) -> f64 {
        self.amplitude.unwrap_or(match self.design {
            DesignKind::Sim2 => 25.0 / (self.n as f64).sqrt(),
            _ => 3.5 / (self.n as f64).sqrt(),
        })
    }

    pub fn resolved_methods(&self) -> Result<Vec<MethodSpec>> {
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("methods list is empty".into()));
        }
        let mut out: Vec<MethodSpec> = Vec::new();
        for name in &self.methods {
            let spec = MethodSpec::parse(name, self.filter)?;
            if !out.contains(&spec) {
                out.push(spec);
            }
        }
        Ok(out)
    }

    fn grid_side(&self) -> Result<usize> {
        let m = (self.p as f64).sqrt().round() as usize;
        if m < 2 || m * m != self.p {
            return Err(Error::InvalidParameter(format!(
                "grid design needs a square p >= 4, got p = {}",
                self.p
            )));
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q_grid.is_empty() {
            return Err(Error::InvalidParameter("q_grid is empty".into()));
        }
        for &q in &self.q_grid {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "target levels must lie in (0, 1], got {q}"
                )));
            }
        }
        if self.n_trials == 0 {
            return Err(Error::InvalidParameter("n_trials must be >= 1".into()));
        }
        if self.n < 2 {
            return Err(Error::InvalidParameter(format!(
                "need n >= 2 observations, got {}",
                self.n
            )));
        }
        self.resolved_methods()?;
        if let Some(a) = self.amplitude {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "amplitude must be positive, got {a}"
                )));
            }
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rho must lie in (-1, 1), got {}",
                self.rho
            )));
        }
        if self.refit_every == 0 {
            return Err(Error::InvalidParameter("refit_every must be >= 1".into()));
        }
        if self.em_iters == 0 {
            return Err(Error::InvalidParameter("em_iters must be >= 1".into()));
        }
        RevealRule::Fraction(self.reveal_fraction).validate()?;
        match self.design {
            DesignKind::Sim1 => {
                if !(self.n_signals >= 1 && self.n_signals <= self.front && self.front <= self.p) {
                    return Err(Error::InvalidParameter(format!(
                        "need 1 <= n_signals <= front <= p, got n_signals = {}, front = {}, p = {}",
                        self.n_signals, self.front, self.p
                    )));
                }
            }
            DesignKind::CustomGaussian => {
                if !(self.n_signals >= 1 && self.n_signals <= self.p) {
                    return Err(Error::InvalidParameter(format!(
                        "need 1 <= n_signals <= p, got n_signals = {}, p = {}",
                        self.n_signals, self.p
                    )));
                }
            }
            DesignKind::Sim2 => {
                self.grid_side()?;
            }
        }
        Ok(())
    }
}

/// One output record; written as one CSV line.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsRow {
    pub method: String,
    pub q: f64,
    pub trial: usize,
    pub n_selected: usize,
    pub fdp: f64,
    pub power: f64,
    pub stop_index: usize,
    pub seed: u64,
    pub runtime_ms: u64,
}

/// Everything a run produced: sorted rows, per-trial failures, and notes
/// about methods that could not run (e.g. p-values with n <= p + 1).
#[derive(Debug, Default)]
pub struct RunReport {
    pub rows: Vec<ResultsRow>,
    pub n_trials: usize,
    pub failures: Vec<(usize, String)>,
    pub notes: Vec<String>,
}

impl RunReport {
    /// True when at most 10% of trials failed.
    pub fn acceptable(&self) -> bool {
        self.failures.len() * 10 <= self.n_trials
    }
}

fn build_filter(kind: FilterKind, cfg: &ExperimentConfig) -> Box<dyn OrderingFilter> {
    let rule = RevealRule::Fraction(cfg.reveal_fraction);
    match kind {
        FilterKind::Vanilla => Box::new(VanillaFilter),
        FilterKind::Logistic => Box::new(PredictiveFilter::new(
            SignModelKind::Logistic,
            rule,
            cfg.refit_every,
        )),
        FilterKind::Gam => Box::new(PredictiveFilter::new(
            SignModelKind::SplineGam,
            rule,
            cfg.refit_every,
        )),
        FilterKind::Rf => Box::new(PredictiveFilter::new(
            SignModelKind::RandomForest,
            rule,
            cfg.refit_every,
        )),
        FilterKind::Em => Box::new(
            TwoGroupFilter::new(RegressorKind::Glm, rule, cfg.refit_every)
                .with_em_iters(cfg.em_iters),
        ),
    }
}

/// Hypothesis order implied by side information: stable lexicographic order
/// over the rows of U (identity when U is the index order).
pub fn side_info_order(u: &SideInfoMatrix) -> Vec<usize> {
    let mut order: Vec<usize> = (0..u.nrows()).collect();
    order.sort_by(|&a, &b| {
        let ra = u.row(a);
        let rb = u.row(b);
        for (x, y) in ra.iter().zip(rb) {
            match x.total_cmp(y) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        a.cmp(&b)
    });
    order
}

enum FixedDesign {
    Linear(TrialDesign),
    Grid(Box<Sim2Geometry>),
}

struct Prepared<'a> {
    config: &'a ExperimentConfig,
    methods: Vec<MethodSpec>,
    amplitude: f64,
    fixed: FixedDesign,
    model: GaussianModel,
    kspec: Option<KnockoffSpec>,
    u: SideInfoMatrix,
    seq_order: Vec<usize>,
    objective: Objective,
    pvalues_feasible: bool,
}

fn prepare(config: &ExperimentConfig) -> Result<(Prepared<'_>, Vec<String>)> {
    config.validate()?;
    let methods = config.resolved_methods()?;
    let amplitude = config.resolved_amplitude();
    let mut design_rng = stream_rng(config.master_seed, domain::DESIGN, 0);
    let (fixed, model, u) = match config.design {
        DesignKind::Sim1 => {
            let d = sim1_design(
                config.p,
                config.n_signals,
                config.front,
                amplitude,
                &mut design_rng,
            )?;
            let model = GaussianModel::ar1(config.p, config.rho)?;
            let u = SideInfoMatrix::from_index_order(config.p);
            (FixedDesign::Linear(d), model, u)
        }
        DesignKind::CustomGaussian => {
            let d = uniform_design(config.p, config.n_signals, amplitude, &mut design_rng)?;
            let model = GaussianModel::ar1(config.p, config.rho)?;
            let u = SideInfoMatrix::from_index_order(config.p);
            (FixedDesign::Linear(d), model, u)
        }
        DesignKind::Sim2 => {
            let geom = sim2_geometry(config.grid_side()?)?;
            let (r_col, s_col): (Vec<f64>, Vec<f64>) = geom.grid.iter().copied().unzip();
            let u = SideInfoMatrix::from_columns(config.p, &[r_col, s_col])?;
            let model = geom.model.clone();
            (FixedDesign::Grid(Box::new(geom)), model, u)
        }
    };
    let needs_knockoffs = methods.iter().any(|m| m.is_knockoff());
    let kspec = if needs_knockoffs {
        let s = equicorrelated_s(&model)?;
        Some(knockoff_spec(&model, s)?)
    } else {
        None
    };
    let needs_pvalues = methods.iter().any(|m| !m.is_knockoff());
    let pvalues_feasible = config.n > config.p + 1;
    let mut notes = Vec::new();
    if needs_pvalues && !pvalues_feasible {
        notes.push(format!(
            "p-value methods skipped on all trials: n = {} gives no residual degrees of freedom with p = {} covariates",
            config.n, config.p
        ));
    }
    let seq_order = side_info_order(&u);
    let objective = match config.design {
        DesignKind::Sim2 => Objective::Logistic,
        _ => Objective::Gaussian,
    };
    Ok((
        Prepared {
            config,
            methods,
            amplitude,
            fixed,
            model,
            kspec,
            u,
            seq_order,
            objective,
            pvalues_feasible,
        },
        notes,
    ))
}

fn run_trial(prep: &Prepared<'_>, trial: usize) -> Result<Vec<ResultsRow>> {
    let cfg = prep.config;
    let seed = derive_key(cfg.master_seed, domain::TRIAL_DATA, trial as u64);
    let mut data_rng = stream_rng(cfg.master_seed, domain::TRIAL_DATA, trial as u64);
    let (x, y, truth): (DMatrix<f64>, Vec<f64>, &[usize]) = match &prep.fixed {
        FixedDesign::Linear(d) => {
            let (x, y) = sim1_sample(cfg.n, &d.beta, cfg.rho, &mut data_rng)?;
            (x, y, &d.nonnull)
        }
        FixedDesign::Grid(geom) => {
            let (x, y, _beta) = sim2_sample(geom, cfg.n, prep.amplitude, &mut data_rng)?;
            (x, y, &geom.nonnull)
        }
    };
    let p = cfg.p;
    let mut rows = Vec::new();

    if let Some(kspec) = &prep.kspec {
        let shared_start = Instant::now();
        let mut krng = stream_rng(cfg.master_seed, domain::KNOCKOFF, trial as u64);
        let xt = sample_knockoffs(&x, &prep.model, kspec, &mut krng)?;
        let mut z = DMatrix::zeros(cfg.n, 2 * p);
        z.view_mut((0, 0), (cfg.n, p)).copy_from(&x);
        z.view_mut((0, p), (cfg.n, p)).copy_from(&xt);
        standardize_columns(&mut z);
        let cv_seed = derive_key(cfg.master_seed, domain::CV_FOLDS, trial as u64);
        let lambda = cv_lambda(&z, &y, prep.objective, 10, cv_seed)?;
        let fit = lasso_fit(&z, &y, lambda, prep.objective)?;
        let w = lcd_statistic(&fit, p)?;
        let shared_ms = if cfg.timings {
            shared_start.elapsed().as_millis() as u64
        } else {
            0
        };
        for (slot, spec) in prep.methods.iter().enumerate() {
            let MethodSpec::Knockoff(kind) = spec else {
                continue;
            };
            let method_start = Instant::now();
            let mut filter = build_filter(*kind, cfg);
            let fseed = derive_key(
                cfg.master_seed,
                domain::FILTER,
                ((trial as u64) << 8) | slot as u64,
            );
            let ordering = run_full_ordering(&w, &prep.u, filter.as_mut(), fseed)?;
            let method_ms = if cfg.timings {
                shared_ms + method_start.elapsed().as_millis() as u64
            } else {
                0
            };
            for &q in &cfg.q_grid {
                let sel = ordering.select_at(q, cfg.estimator)?;
                let (fdp, power) = compute_metrics(&sel.selected, truth, p);
                rows.push(ResultsRow {
                    method: spec.label(),
                    q,
                    trial,
                    n_selected: sel.selected.len(),
                    fdp,
                    power,
                    stop_index: sel.stop_index,
                    seed,
                    runtime_ms: method_ms,
                });
            }
        }
    }

    let needs_pvalues = prep.methods.iter().any(|m| !m.is_knockoff());
    if needs_pvalues && prep.pvalues_feasible {
        let pv_start = Instant::now();
        let pvals = ols_pvalues(&x, &y)?;
        let ordered: Vec<f64> = prep.seq_order.iter().map(|&j| pvals[j]).collect();
        let pv_ms = if cfg.timings {
            pv_start.elapsed().as_millis() as u64
        } else {
            0
        };
        for spec in &prep.methods {
            if spec.is_knockoff() {
                continue;
            }
            for &q in &cfg.q_grid {
                let selected: Vec<usize> = match spec {
                    MethodSpec::Bh => bh(&pvals, q)?,
                    MethodSpec::StoreyBh => storey_bh(&pvals, q, STOREY_TAU)?,
                    MethodSpec::SeqStep => {
                        // s defaults to the target level, capped at lambda
                        let s = q.min(SEQSTEP_LAMBDA);
                        let in_order = adaptive_seqstep(&ordered, q, SEQSTEP_LAMBDA, s)?;
                        let mut mapped: Vec<usize> =
                            in_order.iter().map(|&k| prep.seq_order[k]).collect();
                        mapped.sort_unstable();
                        mapped
                    }
                    MethodSpec::Knockoff(_) => unreachable!(),
                };
                let (fdp, power) = compute_metrics(&selected, truth, p);
                rows.push(ResultsRow {
                    method: spec.label(),
                    q,
                    trial,
                    n_selected: selected.len(),
                    fdp,
                    power,
                    stop_index: 0,
                    seed,
                    runtime_ms: pv_ms,
                });
            }
        }
    }
    Ok(rows)
}

/// Run every configured method at every target level over `n_trials`
/// independent trials. Trials run in parallel on counter-derived RNG
/// substreams; a failing trial is recorded and skipped without aborting
/// the run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    let (prep, notes) = prepare(config)?;
    let outcomes: Vec<std::result::Result<Vec<ResultsRow>, (usize, String)>> = (0..config
        .n_trials)
        .into_par_iter()
        .map(|trial| run_trial(&prep, trial).map_err(|e| (trial, e.to_string())))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(mut r) => rows.append(&mut r),
            Err(f) => failures.push(f),
        }
    }
    rows.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.q.total_cmp(&b.q))
            .then(a.trial.cmp(&b.trial))
    });
    Ok(RunReport {
        rows,
        n_trials: config.n_trials,
        failures,
        notes,
    })
}

/// Decimal rendering with 6 significant digits (exact zero prints as `0`).
fn fmt_real(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let prec = (5 - exp).max(0) as usize;
    format!("{x:.prec$}")
}

fn push_row(out: &mut String, r: &ResultsRow) {
    out.push_str(&r.method);
    out.push(',');
    out.push_str(&fmt_real(r.q));
    out.push(',');
    out.push_str(&r.trial.to_string());
    out.push(',');
    out.push_str(&r.n_selected.to_string());
    out.push(',');
    out.push_str(&fmt_real(r.fdp));
    out.push(',');
    out.push_str(&fmt_real(r.power));
    out.push(',');
    out.push_str(&r.stop_index.to_string());
    out.push(',');
    out.push_str(&r.seed.to_string());
    out.push(',');
    out.push_str(&r.runtime_ms.to_string());
    out.push('\n');
}

pub const CSV_HEADER: &str = "method,q,trial,n_selected,fdp,power,stop_index,seed,runtime_ms";

/// The full CSV body as a string (UTF-8, LF).
pub fn csv_string(rows: &[ResultsRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        push_row(&mut out, r);
    }
    out
}

pub fn write_csv(rows: &[ResultsRow], path: &Path) -> Result<()> {
    std::fs::write(path, csv_string(rows))?;
    Ok(())
}
