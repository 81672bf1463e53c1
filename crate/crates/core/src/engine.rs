//! The sequential ordering engine: estimate FDR over the unexamined
//! hypotheses, ask the filter which one to reveal next, stop when the
//! estimate drops below the target, select the remaining positives.

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::OrderingFilter;
use crate::rng::{domain, stream_rng};
use crate::statistic::{SideInfoMatrix, StatisticVector};

/// Which running FDR estimate drives the stopping rule.
///
/// `Plus` (the offset-1 estimate) gives FDR control; `Zero` drops the offset
/// and gives the modified-FDR guarantee instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Plus,
    Zero,
}

impl EstimatorKind {
    pub fn estimate(self, n_neg_unexamined: usize, n_pos_unexamined: usize) -> f64 {
        match self {
            EstimatorKind::Plus => estimate_fdr_plus(n_neg_unexamined, n_pos_unexamined),
            EstimatorKind::Zero => estimate_fdr_zero(n_neg_unexamined, n_pos_unexamined),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Plus => "plus",
            EstimatorKind::Zero => "zero",
        }
    }
}

/// (1 + #negatives) / max(1, #positives) over the unexamined hypotheses.
pub fn estimate_fdr_plus(n_neg_unexamined: usize, n_pos_unexamined: usize) -> f64 {
    (1 + n_neg_unexamined) as f64 / n_pos_unexamined.max(1) as f64
}

/// #negatives / max(1, #positives); slightly less conservative.
pub fn estimate_fdr_zero(n_neg_unexamined: usize, n_pos_unexamined: usize) -> f64 {
    n_neg_unexamined as f64 / n_pos_unexamined.max(1) as f64
}

/// Exactly the information a filter may legally see at step k: all
/// magnitudes, the signs revealed so far (in reveal order), the side
/// information, and a random stream that was fixed before any sign was
/// observed. No accessor exposes the sign of an unexamined hypothesis.
pub struct FilterContext<'a> {
    magnitudes: &'a [f64],
    revealed: &'a [(usize, i8)],
    unexamined: &'a [usize],
    side_info: &'a SideInfoMatrix,
    filter_rng: &'a mut ChaCha12Rng,
}

impl<'a> FilterContext<'a> {
    /// Build a context. `revealed` is the realized reveal-order prefix,
    /// `unexamined` must be sorted ascending and disjoint from it, and
    /// together they must partition 0..p.
    pub fn new(
        magnitudes: &'a [f64],
        revealed: &'a [(usize, i8)],
        unexamined: &'a [usize],
        side_info: &'a SideInfoMatrix,
        filter_rng: &'a mut ChaCha12Rng,
    ) -> Result<Self> {
        let p = magnitudes.len();
        if side_info.nrows() != p {
            return Err(Error::DimensionMismatch(format!(
                "side info has {} rows for {} hypotheses",
                side_info.nrows(),
                p
            )));
        }
        if revealed.len() + unexamined.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "revealed ({}) + unexamined ({}) != p ({p})",
                revealed.len(),
                unexamined.len()
            )));
        }
        let mut seen = vec![false; p];
        for &(j, s) in revealed {
            if j >= p || seen[j] || !(-1..=1).contains(&s) {
                return Err(Error::InvalidParameter(format!(
                    "bad revealed entry ({j}, {s})"
                )));
            }
            seen[j] = true;
        }
        for win in unexamined.windows(2) {
            if win[0] >= win[1] {
                return Err(Error::InvalidParameter(
                    "unexamined indices must be sorted ascending".into(),
                ));
            }
        }
        for &j in unexamined {
            if j >= p || seen[j] {
                return Err(Error::InvalidParameter(format!(
                    "unexamined index {j} out of range or already revealed"
                )));
            }
            seen[j] = true;
        }
        Ok(Self {
            magnitudes,
            revealed,
            unexamined,
            side_info,
            filter_rng,
        })
    }

    pub fn p(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn magnitudes(&self) -> &[f64] {
        self.magnitudes
    }

    pub fn magnitude(&self, j: usize) -> f64 {
        self.magnitudes[j]
    }

    /// Reveal-order prefix of (index, sign) pairs; signs in {-1, 0, +1}.
    pub fn revealed(&self) -> &[(usize, i8)] {
        self.revealed
    }

    /// Unexamined indices, sorted ascending.
    pub fn unexamined(&self) -> &[usize] {
        self.unexamined
    }

    pub fn side_info(&self) -> &SideInfoMatrix {
        self.side_info
    }

    /// Filter-private randomness; its seed depends only on
    /// (magnitudes, side info, master seed).
    pub fn rng(&mut self) -> &mut ChaCha12Rng {
        self.filter_rng
    }
}

/// Outcome of one adaptive run.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Full permutation: reveal order first, then the unexamined indices in
    /// ascending order.
    pub ordering: Vec<usize>,
    /// Number of revealed hypotheses T.
    pub stop_index: usize,
    /// Selected hypotheses (ascending): unexamined with W > 0.
    pub selected: Vec<usize>,
    /// Running estimate FDR-hat(k) for k = 0..=T.
    pub fdr_trace: Vec<f64>,
    pub estimator_kind: EstimatorKind,
}

struct RunState {
    revealed: Vec<(usize, i8)>,
    unexamined: Vec<usize>,
    n_pos: usize,
    n_neg: usize,
}

impl RunState {
    fn new(w: &StatisticVector) -> Self {
        let p = w.len();
        let mut n_pos = 0;
        let mut n_neg = 0;
        for j in 0..p {
            match w.sign(j) {
                1 => n_pos += 1,
                -1 => n_neg += 1,
                _ => {}
            }
        }
        Self {
            revealed: Vec::with_capacity(p),
            unexamined: (0..p).collect(),
            n_pos,
            n_neg,
        }
    }

    fn reveal(&mut self, w: &StatisticVector, idx: usize) -> Result<()> {
        let pos = self
            .unexamined
            .binary_search(&idx)
            .map_err(|_| Error::FilterContract {
                index: idx,
                reason: "index not in the unexamined set",
            })?;
        self.unexamined.remove(pos);
        let s = w.sign(idx);
        match s {
            1 => self.n_pos -= 1,
            -1 => self.n_neg -= 1,
            _ => {}
        }
        self.revealed.push((idx, s));
        Ok(())
    }
}

fn validate_inputs(w: &StatisticVector, u: &SideInfoMatrix, q: f64) -> Result<()> {
    if u.nrows() != w.len() {
        return Err(Error::DimensionMismatch(format!(
            "W has {} entries, side info has {} rows",
            w.len(),
            u.nrows()
        )));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target level q must lie in (0, 1], got {q}"
        )));
    }
    Ok(())
}

fn selection_from(state: &RunState, w: &StatisticVector) -> Vec<usize> {
    state
        .unexamined
        .iter()
        .copied()
        .filter(|&j| w.sign(j) == 1)
        .collect()
}

fn full_ordering_of(state: &RunState) -> Vec<usize> {
    let mut ordering: Vec<usize> = state.revealed.iter().map(|&(j, _)| j).collect();
    ordering.extend_from_slice(&state.unexamined);
    ordering
}

/// Run the adaptive procedure at level `q`.
///
/// Evaluates the estimate before each reveal, loops while it exceeds `q`
/// and hypotheses remain, and checks every index the filter returns
/// (an out-of-contract index is an error, not a panic).
pub fn run_adaptive_filter(
    w: &StatisticVector,
    u: &SideInfoMatrix,
    filter: &mut dyn OrderingFilter,
    q: f64,
    estimator: EstimatorKind,
    filter_seed: u64,
) -> Result<SelectionResult> {
    validate_inputs(w, u, q)?;
    filter.reset();
    let mut rng = stream_rng(filter_seed, domain::FILTER, 0);
    let magnitudes = w.magnitudes();
    let mut state = RunState::new(w);
    let mut trace = Vec::new();
    loop {
        let fdr = estimator.estimate(state.n_neg, state.n_pos);
        trace.push(fdr);
        if fdr <= q || state.unexamined.is_empty() {
            break;
        }
        let idx = {
            let mut ctx = FilterContext::new(
                &magnitudes,
                &state.revealed,
                &state.unexamined,
                u,
                &mut rng,
            )?;
            filter.next_index(&mut ctx)?
        };
        state.reveal(w, idx)?;
    }
    Ok(SelectionResult {
        stop_index: state.revealed.len(),
        selected: selection_from(&state, w),
        ordering: full_ordering_of(&state),
        fdr_trace: trace,
        estimator_kind: estimator,
    })
}

/// A complete reveal ordering (run to k = p), from which the selection at
/// any level q can be read off afterwards.
///
/// Filters never see q, so one full pass per statistic vector serves every
/// level in a q-grid; `select_at` reproduces `run_adaptive_filter` exactly.
#[derive(Debug, Clone)]
pub struct FullOrdering {
    ordering: Vec<usize>, // reveal order, length p
    signs: Vec<i8>,       // sign of W at ordering[k]
}

/// Run the filter through all p hypotheses, ignoring any stopping rule.
pub fn run_full_ordering(
    w: &StatisticVector,
    u: &SideInfoMatrix,
    filter: &mut dyn OrderingFilter,
    filter_seed: u64,
) -> Result<FullOrdering> {
    validate_inputs(w, u, 1.0)?;
    filter.reset();
    let mut rng = stream_rng(filter_seed, domain::FILTER, 0);
    let magnitudes = w.magnitudes();
    let mut state = RunState::new(w);
    while !state.unexamined.is_empty() {
        let idx = {
            let mut ctx = FilterContext::new(
                &magnitudes,
                &state.revealed,
                &state.unexamined,
                u,
                &mut rng,
            )?;
            filter.next_index(&mut ctx)?
        };
        state.reveal(w, idx)?;
    }
    let ordering: Vec<usize> = state.revealed.iter().map(|&(j, _)| j).collect();
    let signs: Vec<i8> = state.revealed.iter().map(|&(_, s)| s).collect();
    Ok(FullOrdering { ordering, signs })
}

impl FullOrdering {
    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    /// Selection at level `q`: walk the recorded reveal order, stopping at
    /// the first k where the estimate drops to q.
    pub fn select_at(&self, q: f64, estimator: EstimatorKind) -> Result<SelectionResult> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "target level q must lie in (0, 1], got {q}"
            )));
        }
        let p = self.ordering.len();
        let mut n_pos = self.signs.iter().filter(|&&s| s == 1).count();
        let mut n_neg = self.signs.iter().filter(|&&s| s == -1).count();
        let mut trace = Vec::new();
        let mut k = 0;
        loop {
            let fdr = estimator.estimate(n_neg, n_pos);
            trace.push(fdr);
            if fdr <= q || k == p {
                break;
            }
            match self.signs[k] {
                1 => n_pos -= 1,
                -1 => n_neg -= 1,
                _ => {}
            }
            k += 1;
        }
        let mut selected: Vec<usize> = self.ordering[k..]
            .iter()
            .zip(&self.signs[k..])
            .filter(|&(_, &s)| s == 1)
            .map(|(&j, _)| j)
            .collect();
        selected.sort_unstable();
        Ok(SelectionResult {
            ordering: self.ordering.clone(),
            stop_index: k,
            selected,
            fdr_trace: trace,
            estimator_kind: estimator,
        })
    }
}

/// Realized false discovery proportion and power of a selection.
pub fn compute_metrics(selected: &[usize], nonnull_truth: &[usize], p: usize) -> (f64, f64) {
    let mut is_nonnull = vec![false; p];
    for &j in nonnull_truth {
        is_nonnull[j] = true;
    }
    let true_hits = selected.iter().filter(|&&j| is_nonnull[j]).count();
    let false_hits = selected.len() - true_hits;
    let fdp = false_hits as f64 / selected.len().max(1) as f64;
    let power = true_hits as f64 / nonnull_truth.len().max(1) as f64;
    (fdp, power)
}
