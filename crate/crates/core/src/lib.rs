//! Information-theoretic importance measures for the hidden neurons of
//! fully-connected classifiers, and cumulative ablation experiments that
//! relate those measures to classification error.

pub mod ablation;
pub mod datasets;
pub mod error;
pub mod infotheory;
pub mod nn;
pub mod quantize;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
