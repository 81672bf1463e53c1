//! Ordering filters: the rule that picks which hypothesis to reveal next.
//!
//! A filter only ever sees a [`FilterContext`] — magnitudes, the signs
//! revealed so far, side information, and its private random stream — so
//! every implementation is sign-invariant by construction.

mod sign_model;
mod two_group;

pub use sign_model::{fit_sign_model, predictive_next, PredictiveFilter, SignModel, SignModelKind};
pub use two_group::{
    bayes_next, e_step, em_initialize, m_step_delta, m_step_regression, two_group_density,
    EStepOutput, RegressorKind, TwoGroupFilter, TwoGroupParams, CLIP_EPS,
};

use crate::engine::FilterContext;
use crate::error::{Error, Result};
use crate::statistic::StatisticVector;

/// A rule choosing the next hypothesis to reveal among the unexamined.
pub trait OrderingFilter {
    fn next_index(&mut self, ctx: &mut FilterContext<'_>) -> Result<usize>;

    /// Clear per-run state; called by the engine before each run so a filter
    /// value can be reused across statistic vectors.
    fn reset(&mut self) {}
}

/// Reveal in increasing magnitude order, ignoring side information. This is
/// the classic (non-adaptive) knockoff ordering.
pub struct VanillaFilter;

impl OrderingFilter for VanillaFilter {
    fn next_index(&mut self, ctx: &mut FilterContext<'_>) -> Result<usize> {
        vanilla_next(ctx)
    }
}

/// Argmin of |W| over the unexamined set, ties broken by smallest index.
pub fn vanilla_next(ctx: &FilterContext<'_>) -> Result<usize> {
    // unexamined is sorted ascending, so a strict `<` keeps the smallest
    // index among ties
    let mut best: Option<usize> = None;
    for &j in ctx.unexamined() {
        match best {
            Some(b) if ctx.magnitude(j) < ctx.magnitude(b) => best = Some(j),
            None => best = Some(j),
            _ => {}
        }
    }
    best.ok_or(Error::EmptyInput("unexamined set"))
}

/// How much to disclose through the vanilla rule before fitting any model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RevealRule {
    /// Reveal the ceil(fraction * p) smallest magnitudes.
    Fraction(f64),
    /// Reveal every statistic with |W| strictly below the threshold.
    Threshold(f64),
}

impl RevealRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RevealRule::Fraction(f) => {
                if !(0.0..1.0).contains(&f) {
                    return Err(Error::InvalidParameter(format!(
                        "initial reveal fraction must lie in [0, 1), got {f}"
                    )));
                }
            }
            RevealRule::Threshold(t) => {
                if !t.is_finite() {
                    return Err(Error::NonFinite("initial reveal threshold"));
                }
            }
        }
        Ok(())
    }

    /// True while the warm-start phase is still running for the given
    /// revealed count and magnitude vector.
    pub(crate) fn in_warmup(&self, magnitudes: &[f64], n_revealed: usize) -> bool {
        match *self {
            RevealRule::Fraction(f) => {
                let target = (f * magnitudes.len() as f64).ceil() as usize;
                n_revealed < target
            }
            // threshold mode keeps warming up while any sub-threshold
            // magnitude is still hidden; with the vanilla rule active this
            // is equivalent to counting them
            RevealRule::Threshold(t) => {
                let below = magnitudes.iter().filter(|&&m| m < t).count();
                n_revealed < below
            }
        }
    }
}

impl Default for RevealRule {
    fn default() -> Self {
        RevealRule::Fraction(0.1)
    }
}

/// The warm-start disclosure plan: which indices the vanilla rule will
/// reveal before any model fitting starts, in order.
pub fn initial_reveal(w: &StatisticVector, rule: RevealRule) -> Result<Vec<usize>> {
    rule.validate()?;
    let p = w.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        w.magnitude(a)
            .partial_cmp(&w.magnitude(b))
            .expect("finite magnitudes")
            .then(a.cmp(&b))
    });
    let take = match rule {
        RevealRule::Fraction(f) => (f * p as f64).ceil() as usize,
        RevealRule::Threshold(t) => order.iter().filter(|&&j| w.magnitude(j) < t).count(),
    };
    order.truncate(take);
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain, stream_rng};
    use crate::statistic::SideInfoMatrix;

    fn ctx_parts(values: Vec<f64>) -> (StatisticVector, SideInfoMatrix) {
        let p = values.len();
        (
            StatisticVector::new(values).unwrap(),
            SideInfoMatrix::empty(p),
        )
    }

    #[test]
    fn vanilla_breaks_ties_by_index() {
        let (w, u) = ctx_parts(vec![3.0, 0.5, 0.5, 2.0]);
        let mags = w.magnitudes();
        let unexamined = [1usize, 2, 3];
        let mut rng = stream_rng(0, domain::TEST, 0);
        let revealed = [(0usize, 1i8)];
        let ctx = FilterContext::new(&mags, &revealed, &unexamined, &u, &mut rng).unwrap();
        assert_eq!(vanilla_next(&ctx).unwrap(), 1);
    }

    #[test]
    fn vanilla_singleton_and_argmin() {
        let (w, u) = ctx_parts(vec![0.7, -0.2, 0.0, 3.0, -0.1, 0.9, 1.1, 2.5]);
        let mags = w.magnitudes();
        let mut rng = stream_rng(0, domain::TEST, 0);
        let unexamined = [7usize];
        let ctx = FilterContext::new(
            &mags,
            &[(0, 1), (1, -1), (2, 0), (3, 1), (4, -1), (5, 1), (6, 1)],
            &unexamined,
            &u,
            &mut rng,
        )
        .unwrap();
        assert_eq!(vanilla_next(&ctx).unwrap(), 7);

        let unexamined = [3usize, 4];
        let mut rng = stream_rng(0, domain::TEST, 0);
        let ctx = FilterContext::new(
            &mags,
            &[(0, 1), (1, -1), (2, 0), (5, 1), (6, 1), (7, 1)],
            &unexamined,
            &u,
            &mut rng,
        )
        .unwrap();
        assert_eq!(vanilla_next(&ctx).unwrap(), 4);
    }

    #[test]
    fn initial_reveal_fraction() {
        let w = StatisticVector::new(vec![5.0, 0.1, 3.0, 0.4, 2.0, 1.0, 0.2, 6.0, 7.0, 8.0])
            .unwrap();
        assert_eq!(
            initial_reveal(&w, RevealRule::Fraction(0.1)).unwrap(),
            vec![1]
        );
        assert_eq!(
            initial_reveal(&w, RevealRule::Fraction(0.3)).unwrap(),
            vec![1, 6, 3]
        );
        assert!(initial_reveal(&w, RevealRule::Fraction(0.0))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn initial_reveal_threshold_ascending_with_index_ties() {
        let w = StatisticVector::new(vec![0.02, -0.01, 0.5, 0.01, 0.02, -2.0]).unwrap();
        // |W| below 0.03: indices 0, 1, 3, 4; ascending magnitude with
        // ties by index -> 1, 3, 0, 4
        assert_eq!(
            initial_reveal(&w, RevealRule::Threshold(0.03)).unwrap(),
            vec![1, 3, 0, 4]
        );
    }

    #[test]
    fn fraction_out_of_range_rejected() {
        let w = StatisticVector::new(vec![1.0]).unwrap();
        assert!(initial_reveal(&w, RevealRule::Fraction(1.0)).is_err());
        assert!(initial_reveal(&w, RevealRule::Fraction(-0.1)).is_err());
    }
}
