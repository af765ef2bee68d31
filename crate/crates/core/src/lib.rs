//! Self-supervised auxiliary tasks for fine-grained visual classification.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tensor`]) and
//! everything built on top of it: a procedurally generated fine-grained
//! dataset ([`dataset`]), seeded image transforms including the region
//! confusion shuffle ([`transforms`]), a compact convolutional model with
//! rotation / PIRL / DCL / CAM heads ([`model`]), the associated losses
//! ([`losses`]), the diversification block ([`diversification`]), the
//! training loop ([`trainer`]) and Grad-CAM export ([`explain`]).
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod config;
pub mod dataset;
pub mod diversification;
mod error;
pub mod explain;
pub mod losses;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod transforms;
pub mod verify;

pub use error::{Error, Result};
