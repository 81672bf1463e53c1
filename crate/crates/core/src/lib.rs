//! Adaptive knockoff filtering: sequential multiple testing that orders
//! hypotheses with side information while keeping finite-sample FDR
//! control.
//!
//! The heart of the crate is [`engine::run_adaptive_filter`]: given knockoff
//! W statistics and per-hypothesis side information, it repeatedly asks a
//! pluggable [`filters::OrderingFilter`] which hypothesis looks *least*
//! promising, reveals that hypothesis's sign, and stops once the running
//! FDR estimate over the still-masked hypotheses drops below the target
//! level. Because filters only ever see magnitudes, already-revealed signs,
//! and side information, any filter — from the magnitude-only vanilla rule
//! to the EM-fitted two-group model in [`filters`] — inherits the same
//! selection guarantee.
//!
//! Everything needed to run end-to-end experiments ships alongside the
//! engine: exact Gaussian knockoff sampling ([`knockoff`]), cross-validated
//! lasso coefficient-difference statistics ([`lasso`]), p-value baselines
//! ([`baselines`]), and a deterministic Monte-Carlo harness ([`sim`]).

pub mod baselines;
pub mod engine;
pub mod error;
pub mod filters;
pub mod forest;
pub mod glm;
pub mod knockoff;
pub mod lasso;
pub mod rng;
pub mod sim;
pub mod spline;
pub mod statistic;

pub use engine::{
    compute_metrics, run_adaptive_filter, run_full_ordering, EstimatorKind, FilterContext,
    FullOrdering, SelectionResult,
};
pub use error::{Error, Result};
pub use filters::{OrderingFilter, RevealRule, VanillaFilter};
pub use statistic::{SideInfoMatrix, StatisticVector};
