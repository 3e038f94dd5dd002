//! Deterministic simulator for two-phase federated training: high-resource
//! clients warm a model up with first-order updates, then every client
//! continues with seed-exchange zeroth-order (SPSA) updates. Includes exact
//! communication and memory cost accounting and a config-driven experiment
//! harness.
//!
//! Module map:
//! - [`nn`]: flat-parameter MLP, cross-entropy, exact backprop.
//! - [`zopt`]: seed-keyed perturbations, SPSA estimates, ZO-SGD.
//! - [`fed`]: partitioning, resource classes, warm-up and zeroth-order
//!   rounds, the two-phase driver.
//! - [`cost`]: per-client communication and memory formulas.
//! - [`data`]: synthetic datasets and binary file formats.
//! - [`metrics`] / [`config`] / [`cli`]: harness plumbing.

pub mod cli;
pub mod config;
pub mod cost;
pub mod data;
pub mod error;
pub mod fed;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod zopt;

pub use error::{Error, Result};
