//! Allocation-only core of the `fairdea` fairness audit.
//!
//! Every stage of the audit is a pure function of its inputs and a seed:
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`cohort`] | Patient records, validated cohorts, positive-orthant shift |
//! | [`synth`] | Moment-matched synthetic cohorts |
//! | [`resample`] | Quota-based stratified resampling to target proportions |
//! | [`regression`] | OLS and IRLS logistic regression primitives |
//! | [`debias`] | Cross-fitted orthogonal-score adjustment of each measure |
//! | [`folds`] | Group-stratified fold assignment for cross-fitting |
//! | [`lp`] | Dense phase-one simplex feasibility solver |
//! | [`dea`] | Hyperbolic graph efficiency under variable returns to scale |
//! | [`conformal`] | Group-conditional randomized conformal intervals |
//! | [`mmd`] | Gaussian-kernel MMD two-sample permutation tests |
//! | [`mediation`] | Total / indirect / direct effect decomposition |
//! | [`plot`] | Histogram data for efficiency distributions |
//!
//! The crate is `no_std` and needs only `alloc`. File formats, configuration
//! and the command line live in the `fairdea` companion crate.

#![no_std]
#![forbid(unsafe_code)]
// Index loops mirror the matrix notation; `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod cohort;
pub mod conformal;
pub mod dea;
pub mod debias;
pub mod folds;
pub mod linalg;
pub mod lp;
pub mod mediation;
pub mod mmd;
pub mod plot;
pub mod regression;
pub mod resample;
pub mod seed;
pub mod stats;
pub mod synth;

pub use cohort::{Cohort, CohortError, GroupLabel, Measure, PatientRecord};
pub use conformal::{GroupMeanModel, PredictionInterval};
pub use dea::{DeaInstance, DeaSettings, EfficiencyScore};
pub use mmd::MmdResult;
pub use resample::ProportionTarget;
