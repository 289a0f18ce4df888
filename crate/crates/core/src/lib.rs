//! Predicting one-year mortality from lagged credit-report panels.
//!
//! The pipeline: ingest or synthesize a yearly credit panel, assemble a
//! lagged design matrix per target year, fit actuarial baselines and tree
//! ensembles, then evaluate them out of year with ROC/AUC, DeLong tests,
//! conditional-probability tables and gain importance reports.

pub mod baselines;
pub mod boosting;
pub mod cart;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod forest;
pub mod importance;
pub mod model_io;
pub mod panel;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
