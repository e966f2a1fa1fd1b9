//! Dropout noise geometry and loss-landscape flatness for small
//! fully-connected networks.
//!
//! The crate trains `784-50-50-10`-style networks with dropout and measures
//! how the dropout-induced noise is shaped relative to the curvature of the
//! deterministic loss:
//!
//! - [`nn`]: network, masks, loss, analytic gradients, GD/Adam, checkpoints.
//! - [`data`]: MNIST IDX ingestion and a synthetic quadratic oracle task.
//! - [`landscape`]: loss profiles, interval flatness, filter-normalized slices.
//! - [`noise`]: trajectory and gradient samples, covariance, PCA, power-law fits.
//! - [`hessian`]: exact or finite-difference Hessians and the `Tr(H Sigma)` alignment trace.
//!
//! All stochastic pieces are seeded; independent probes run through [`par`],
//! which uses rayon when the `parallel` feature is on and a plain loop
//! otherwise, with identical results.

mod codec;
pub mod data;
pub mod error;
pub mod hessian;
pub mod landscape;
pub mod linalg;
pub mod nn;
pub mod noise;
pub mod objective;
pub mod par;

pub use error::{Error, Result};
pub use objective::{NetworkObjective, Objective};
