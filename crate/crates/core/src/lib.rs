//! Desk-scale simulator for offline preference alignment when labels pass
//! through local differential privacy and adversarial corruption, under
//! linear reward models.
//!
//! The pieces, bottom to top:
//!
//! - [`env`] — linear preference environments, Bradley-Terry labels, dataset
//!   sampling on the zero-sum parameter ball.
//! - [`privacy`] — randomized response and its exact debiasing constants.
//! - [`corruption`] — strong label adversaries and the corrupt/privatize
//!   pipeline orderings (`ctl`, `ltc`, `clc`).
//! - [`estimator`] — the shifted-and-scaled logistic MLE by projected
//!   descent; one analyzer covers clean, private, and corrupted data.
//! - [`rlhf`] — greedy and pessimistic policy construction from the
//!   estimate, plus the theory radius for the confidence ellipsoid.
//! - [`dpo`] — log-linear direct preference optimization via the same
//!   estimator and the closed-form parameter recovery.
//! - [`metrics`] — ground-truth values, suboptimality gaps, the relative
//!   condition number, coverage, weighted norms.
//! - [`harness`] — reproducible sweep execution, CSV emission, rate fits,
//!   and paired setting comparisons.
//!
//! Each major capability has a runnable walkthrough under `examples/`;
//! `cargo run --example ctl_vs_ltc` is a good place to start.

pub mod corruption;
pub mod dpo;
pub mod env;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod metrics;
pub mod policy;
pub mod privacy;
pub mod rlhf;
pub mod rng;

pub use corruption::{
    apply_pipeline, corrupt, CorruptionSpec, CorruptionStrategy, PipelineOutput, PipelineSetting,
};
pub use env::{
    bt_prob, project_theta_star, sample_dataset, sigmoid, BehaviorRule, Environment,
    EnvironmentSpec, PreferenceDataset, PreferenceRecord, Stage,
};
pub use error::{Error, Result};
pub use estimator::{estimate, ConstraintSet, EstimateReport, SolverConfig, StepRule};
pub use policy::TabularPolicy;
pub use privacy::{debias_scale, debiased_label, randomize_label, retention_prob, PrivacyParams};
pub use rng::{child_seed, rng_from_seed, SimRng};
