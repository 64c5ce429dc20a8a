//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! The engine is a dynamic tape: every forward operation appends a record to
//! a [`Graph`], and [`Graph::backward`] replays the records in exact reverse
//! order, accumulating gradients additively into every tensor that requires
//! them. There is no broadcasting anywhere — all shape agreement is exact,
//! and mismatches surface as dimension errors naming the operation and both
//! shapes.
//!
//! [`grad_check`] provides an independent central-finite-difference oracle
//! used to validate every backward rule and whole assembled models.

mod grad_check;
mod graph;
mod tensor;

pub use grad_check::{fd_gradients, grad_check, GradCheckReport, GRAD_CHECK_SUBSAMPLE_CAP};
pub use graph::{softmax_rows, Graph, TensorId, UnaryFn};
pub use tensor::Tensor;
