//! Dense `f64` matrices, a taped reverse-mode autodiff graph and Adam.

mod adam;
pub mod gradcheck;
mod graph;
mod matrix;
mod param;

pub use adam::{AdamConfig, AdamState};
pub use graph::{sigmoid, Graph, Var};
pub use matrix::{matmul, matmul_nt, matmul_tn, softmax, softmax_rows, Matrix};
pub use param::{ParamId, ParamStore, Parameter};

/// Fixed epsilon for every layer normalisation in the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;
