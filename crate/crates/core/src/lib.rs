//! Adaptive adversarial factorization machines (AAFM).
//!
//! A degree-2 factorization machine over categorical feature embeddings,
//! trained with per-feature fast-gradient perturbations whose strength and
//! per-sample weight adapt to two feature statistics: how often a value
//! occurs (frequency) and how many distinct contexts it occurs in
//! (combination variety). The crate also carries the evaluation harness
//! used to measure feature fairness and robustness.
//!
//! Pipeline:
//!
//! 1. [`dataset`] ingests delimiter-separated interaction logs, encodes them,
//!    splits leave-one-out and samples negatives.
//! 2. [`stats`] computes per-value frequency and variety over the train split.
//! 3. [`model`] scores samples and computes analytic gradients.
//! 4. [`adversary`] builds fast-gradient perturbations and adapts them.
//! 5. [`trainer`] alternates normal and adversarial passes.
//! 6. [`eval`] reports AUC, Logloss, bucketed fairness and robustness.
//! 7. [`experiment`] wires it all to a configuration file for the CLI.

pub mod adversary;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod optim;
pub mod rng;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};

/// Crate version embedded in every output file header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
