//! Reverse-mode automatic differentiation over dense, row-major CPU tensors.
//!
//! Every [`Tensor`] is an immutable node in a dynamically built graph. Calling
//! [`Tensor::backward`] on a scalar walks the graph in reverse creation order
//! and returns a [`Gradients`] table keyed by leaf tensors.
//!
//! The op set is deliberately narrow: it covers exactly what the convolutional
//! GAN networks in this workspace need (stride-1 convolutions, 2x pooling and
//! upsampling, batch normalization, channel concatenation and a handful of
//! pointwise functions). Element type is generic so the same graph code runs
//! in `f32` for training and in `f64` for finite-difference verification.

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod real;
mod reduce;
mod shape;
mod tensor;

pub use norm::BatchStats;
pub use real::Real;
pub use tensor::{Gradients, Tensor};

/// Number of elements described by a shape.
pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}
