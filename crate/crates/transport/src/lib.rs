//! Transport causal effect measures from a randomized trial to a target
//! population.
//!
//! The library answers one question: given trial data (covariates, random
//! treatment, outcome) and a covariate sample from a different target
//! population, what is a causal effect measure, the risk difference, risk
//! ratio, odds ratio and nine relatives, in the target population?
//!
//! The pieces:
//!
//! * [`measures`]: the registry of effect measures Φ with their effect
//!   functions Γ (partial inverses) and derivatives.
//! * [`data`]: the pooled observation container and CSV ingestion.
//! * [`nuisance`]: density-ratio and outcome-regression fits (logistic and
//!   least squares), with optional cross-fitting.
//! * [`mestimation`]: a generic stacked-estimating-equation engine producing
//!   sandwich covariance matrices.
//! * [`estimators`]: the transport estimators, weighting, regression-based,
//!   estimating-equation and one-step, under mean or effect exchangeability,
//!   with sandwich, oracle, and bootstrap inference.
//! * [`simlab`]: synthetic data generators and a Monte Carlo study runner
//!   that reproduces the estimators' operating characteristics.
//! * [`oracle`]: an exhaustively enumerable discrete population on which
//!   every identification route and estimator must agree exactly.
//!
//! The `transport` binary wraps all of this in a CLI.

pub mod data;
pub mod error;
pub mod estimators;
pub mod measures;
pub mod mestimation;
pub mod nuisance;
pub mod oracle;
pub mod simlab;

pub use error::{Error, Result};
pub use measures::Measure;
