//! Log-spline density models on `[0, 1]` under hierarchical model-averaging
//! priors.
//!
//! The crate provides the numerical substrate (composite Gauss-Legendre
//! quadrature, B-spline bases), the exponential-family density model with its
//! statistical distances, prior constructions (flat boxes and discrete
//! coefficient nets with several model-weight schemes), evidence and
//! within-model MCMC for the posterior, Bayes factors against a parametric
//! null, entropy and test-bound audits, and a config-driven experiment
//! harness exposed through the `logspline` binary.

pub mod basis;
pub mod calibration;
pub mod entropy;
pub mod error;
pub mod experiment;
pub mod model;
pub mod posterior;
pub mod prior;
pub mod quadrature;
pub mod select;
pub mod truth;

pub use error::{Error, Result};
