//! Randomization-based causal inference for time series experiments.
//!
//! A unit is observed over `t = 1..=T`; at every step a binary treatment is
//! drawn from a known, possibly history-dependent, probability. Estimators
//! weight outcomes by the inverse propensity of the treatment suffix they
//! depend on, and tests draw their reference distribution from the
//! assignment mechanism itself.

pub mod error;
pub mod estimators;
pub mod experiment;
pub mod inference;
pub mod io;
pub mod mechanism;
pub mod pooling;
pub mod process;
pub mod rng;
pub mod slippage;
pub mod study;

pub use error::{Error, Result};
pub use estimators::{EstimandSpec, EstimateResult, MPeriodContrast, Proxy, ProxyRule};
pub use experiment::{validate_experiment, Panel, TreatmentPath, UnitExperiment, Violation};
pub use inference::{Alternative, ExactOptions, TestResult, TieRule};
pub use mechanism::{AssignmentMechanism, AssignmentRule, Breakpoint, OutcomeFeedback};
pub use pooling::PooledResult;
pub use process::{NoiseKind, PotentialProcessSpec};
