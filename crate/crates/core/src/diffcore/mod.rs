//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is built fresh for every step: leaves are inserted, ops
//! append nodes, and [`Graph::backward`] returns a [`Gradients`] map for every
//! node that depends on a leaf created with `requires_grad`.

mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use gradcheck::{gradcheck, relative_error, GradcheckReport, FD_STEP};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;
