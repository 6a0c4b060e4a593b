//! Wasserstein-regularised PAC-Bayes learning.
//!
//! Batch learning trains data-dependent priors on disjoint folds and a
//! posterior pulled towards them; online learning takes per-example steps
//! kept inside a log-barrier ball around the previous hypothesis. Every
//! learner can be turned into a numeric generalisation certificate.

pub mod batch;
pub mod bounds;
pub mod cocob;
pub mod data;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod online;
pub mod ot;
pub mod rng;

pub use error::{Error, Result};
pub use model::{Hypothesis, ModelKind, ModelSpec, ParamVector};
