//! Minimal reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Graph`] is a tape: every op appends a node holding its forward value,
//! and [`Graph::backward`] walks the tape in reverse to populate gradients on
//! every node that requires them. Handles into the tape are plain [`Var`]
//! indices, so graphs are `Send` and independent graphs can be built on
//! separate threads.
//!
//! The op set is the one a small convolutional model with patch sampling
//! needs: 1D/2D convolution, bilinear up-sampling and point sampling,
//! pooling, elementwise activations, and two fused losses.

mod adam;
mod error;
mod graph;
mod ops;
mod scalar;
mod tensor;

#[cfg(any(test, feature = "testing"))]
pub mod finite_diff;

pub use adam::{AdamConfig, AdamState};
pub use error::{AutodiffError, Result};
pub use graph::{Graph, Var};
pub use ops::PoolMode;
pub use scalar::Scalar;
pub use tensor::Tensor;
