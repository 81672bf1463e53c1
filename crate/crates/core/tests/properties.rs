//! Randomized invariants. These are not accuracy checks (the acceptance
//! suite owns those); they pin structural properties that must hold for
//! every input: replaying a recorded ordering reproduces the sequential
//! run, selections only ever contain unexamined positives, posterior
//! summaries stay in range, and rejection sets grow with the target level.

use adaknock::baselines::bh;
use adaknock::filters::{e_step, PredictiveFilter, SignModelKind, TwoGroupParams};
use adaknock::{
    run_adaptive_filter, run_full_ordering, EstimatorKind, RevealRule, SideInfoMatrix,
    StatisticVector, VanillaFilter,
};
use proptest::prelude::*;

/// Statistic vectors with repeated magnitudes and exact zeros mixed in, the
/// cases most likely to expose bookkeeping slips.
fn statistic_strategy() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(
        prop_oneof![
            4 => -4.0..4.0f64,
            1 => Just(0.0f64),
            1 => prop_oneof![Just(1.5f64), Just(-1.5f64), Just(0.75f64)],
        ],
        3..40,
    )
}

fn params_strategy() -> impl Strategy<Value = (f64, f64, f64, f64, f64)> {
    (
        0.05..0.95f64,
        0.0..0.9f64,
        0.0..0.9f64,
        0.1..5.0f64,
        0.1..5.0f64,
    )
}

proptest! {
    /// Replaying the full recorded ordering at level q must give exactly
    /// the selection the online run produces, for any W (ties and zeros
    /// included) and any estimator.
    #[test]
    fn select_at_reproduces_sequential_run(
        w in statistic_strategy(),
        q in 0.01..1.0f64,
        seed in 0..1_000u64,
        plus in proptest::bool::ANY,
    ) {
        let est = if plus { EstimatorKind::Plus } else { EstimatorKind::Zero };
        let sv = StatisticVector::new(w).unwrap();
        let u = SideInfoMatrix::from_index_order(sv.len());
        let mut f1 = VanillaFilter;
        let mut f2 = VanillaFilter;
        let mut online = run_adaptive_filter(&sv, &u, &mut f1, q, est, seed)
            .unwrap()
            .selected;
        online.sort_unstable();
        let replay = run_full_ordering(&sv, &u, &mut f2, seed)
            .unwrap()
            .select_at(q, est)
            .unwrap()
            .selected;
        prop_assert_eq!(online, replay);
    }

    /// Same replay identity for a filter that actually uses side
    /// information and its context RNG.
    #[test]
    fn select_at_reproduces_sequential_run_logistic(
        w in statistic_strategy(),
        q in 0.05..0.8f64,
        seed in 0..200u64,
    ) {
        let sv = StatisticVector::new(w).unwrap();
        let u = SideInfoMatrix::from_index_order(sv.len());
        let make = || PredictiveFilter::new(SignModelKind::Logistic, RevealRule::Fraction(0.2), 1);
        let mut online = run_adaptive_filter(
            &sv, &u, &mut make(), q, EstimatorKind::Plus, seed,
        )
        .unwrap()
        .selected;
        online.sort_unstable();
        let replay = run_full_ordering(&sv, &u, &mut make(), seed)
            .unwrap()
            .select_at(q, EstimatorKind::Plus)
            .unwrap()
            .selected;
        prop_assert_eq!(online, replay);
    }

    /// Whatever the filter does, a selection may only contain strictly
    /// positive statistics, and a nonempty selection certifies that the
    /// final estimate cleared the target.
    #[test]
    fn selections_are_unexamined_positives(
        w in statistic_strategy(),
        q in 0.01..1.0f64,
        seed in 0..1_000u64,
    ) {
        let sv = StatisticVector::new(w).unwrap();
        let u = SideInfoMatrix::from_index_order(sv.len());
        let mut filter = VanillaFilter;
        let res = run_adaptive_filter(&sv, &u, &mut filter, q, EstimatorKind::Plus, seed).unwrap();
        for &j in &res.selected {
            prop_assert!(sv.value(j) > 0.0, "selected index {} has W = {}", j, sv.value(j));
        }
        if !res.selected.is_empty() {
            let last = *res.fdr_trace.last().unwrap();
            prop_assert!(last <= q, "stopped with estimate {} > q = {}", last, q);
        }
    }

    /// Posterior summaries stay inside their ranges for any magnitudes,
    /// revealed pattern, and valid parameters.
    #[test]
    fn e_step_outputs_stay_in_range(
        mags in proptest::collection::vec(
            prop_oneof![3 => 0.001..8.0f64, 1 => Just(0.0f64)], 2..50),
        (nu, d0, d1, b0, b1) in params_strategy(),
        reveal_mask in proptest::collection::vec(0..3u8, 2..50),
    ) {
        let p = mags.len();
        let params = TwoGroupParams::constant(p, nu, d0, d1, b0, b1);
        let revealed: Vec<(usize, i8)> = (0..p)
            .filter_map(|j| match reveal_mask.get(j) {
                Some(1) if mags[j] > 0.0 => Some((j, 1i8)),
                Some(2) if mags[j] > 0.0 => Some((j, -1i8)),
                _ => None,
            })
            .collect();
        let out = e_step(&mags, &revealed, &params);
        for j in 0..p {
            prop_assert!((0.0..=1.0).contains(&out.hbar[j]), "hbar[{}] = {}", j, out.hbar[j]);
            prop_assert!(out.ybar0[j].is_finite() && out.ybar0[j] > 0.0);
            prop_assert!(out.ybar1[j].is_finite() && out.ybar1[j] > 0.0);
        }
    }

    /// The rejection set can only grow as the target level rises.
    #[test]
    fn bh_is_monotone_in_the_level(
        pv in proptest::collection::vec(0.0..=1.0f64, 1..60),
        q_lo in 0.01..0.5f64,
        bump in 0.0..0.5f64,
    ) {
        let q_hi = q_lo + bump;
        let lo = bh(&pv, q_lo).unwrap();
        let hi = bh(&pv, q_hi).unwrap();
        for j in &lo {
            prop_assert!(hi.contains(j), "index {} rejected at {} but not {}", j, q_lo, q_hi);
        }
    }
}
