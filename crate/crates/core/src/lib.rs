//! Degradation modeling for reliability analysis.
//!
//! The crate fits general path models (mixed-effects nonlinear regression),
//! stochastic-process models (Wiener, gamma, inverse Gaussian) and Bayesian
//! hierarchical models to repeated-measures and destructive degradation data,
//! and turns the fits into failure-time distributions, remaining-useful-life
//! distributions and thermal indices. Kaplan-Meier estimates with
//! simultaneous bands provide a nonparametric baseline.

pub mod addt;
pub mod bayes;
pub mod curve;
pub mod data;
pub mod error;
pub mod fit;
pub mod gpm;
pub mod nonparam;
pub mod optim;
pub mod paths;
pub mod quadrature;
pub mod rng;
pub mod sp;
pub mod stats;

pub use error::{Error, Result};
