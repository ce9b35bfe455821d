//! Confounder-dependent Bayesian mixture modeling of heterogeneous causal
//! effects.
//!
//! The library fits a dependent probit stick-breaking mixture to the two
//! potential-outcome distributions of a binary-treatment observational
//! dataset via a blocked Gibbs sampler, summarizes the posterior over
//! cluster partitions into point estimates, forms Cartesian-product
//! population groups, and computes group-level causal effects (GATE, GARR)
//! and the ATE with full posterior uncertainty. A simulation harness
//! reproduces the seven benchmark data-generating scenarios, and a
//! propensity-score matching module provides the standard pre-processing
//! step.

pub mod config;
pub mod error;
pub mod estimands;
pub mod gibbs;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod matching;
pub mod model;
pub mod partition;
pub mod scalar;
pub mod simulate;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete double-precision aliases; the CLI and the simulation harness
/// work with these.
pub type Dataset = model::Dataset<f64>;
pub type ArmParams = model::ArmParams<f64>;
pub use model::Hyperparams;
