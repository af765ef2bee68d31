//! Dense tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain value; differentiation happens on a [`Graph`], which
//! records every operation applied to its nodes and replays them backwards.
//! Convolution follows the cross-correlation convention. Element type is
//! generic over [`Scalar`] so the same code runs in `f32` for training and
//! `f64` for gradient checks.

mod conv;
mod gradcheck;
mod graph;
mod ops;
mod param;
mod scalar;
mod value;

#[cfg(test)]
mod tests;

pub use gradcheck::grad_check;
pub use graph::{Graph, Var};
pub use ops::{Elementwise, Reduction};
pub use param::{Bound, ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use value::Tensor;
