//! Dense tensors and a tape-based reverse-mode differentiation graph.

mod graph;
mod kernels;
mod ops;
mod tensor;

pub use graph::{Activation, Graph, OpKind, Var};
pub use tensor::Tensor;

/// Numerically stable softmax of a plain vector.
pub fn softmax_vec(x: &[f64]) -> Vec<f64> {
    kernels::softmax(x)
}
