//! Streaming estimation of the geometric median.
//!
//! The crate provides four online estimators — averaged stochastic gradient
//! descent (ASGD), stochastic Newton (SN) and its averaged and weighted
//! averaged variants (ASN/WASN) — backed by O(p²) Sherman-Morrison updates of
//! the inverse Hessian estimate, plus online covariance estimation,
//! directional confidence intervals, a chi-squared location test, an offline
//! Weiszfeld solver for validation, and a seeded Monte-Carlo experiment
//! harness.

pub mod cli;
pub mod covariance_stream;
pub mod error;
pub mod estimators;
pub mod hessian_stream;
pub mod inference;
pub mod linalg;
pub mod median_objective;
pub mod simulation;

pub use covariance_stream::CovarianceAccumulator;
pub use error::{Error, Result};
pub use estimators::{
    Algorithm, AsgdParams, AsgdState, HyperParams, MedianEstimator, NewtonState, SnParams,
    WasnParams, WasnState,
};
pub use hessian_stream::{BetaSchedule, HessianAccumulator, PlugInHessianAccumulator};
pub use inference::{
    chi_square_quantile, chi_square_test, confidence_interval, normal_quantile,
    ConfidenceInterval, TestResult,
};
pub use median_objective::{grad_g, hessian_g, loss_g, GradResult};
pub use simulation::{
    run_level_experiment, run_mse_experiment, weiszfeld, CovStructure, ExperimentConfig,
    GaussianStream, LevelResult, MseResult, WeiszfeldResult,
};
