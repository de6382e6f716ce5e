//! Variational autoencoder for sparse binary mutation profiles, with PCA and
//! k-means baselines, evaluation metrics and a command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod vae;

pub use error::{Error, Result};
