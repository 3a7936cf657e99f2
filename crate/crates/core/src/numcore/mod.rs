//! Dense `f64` tensors, define-by-run reverse-mode differentiation and Adam.

mod adam;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{optimizer_steps_taken, Adam, Schedule};
pub use gradcheck::grad_check;
pub use graph::{sigmoid, softmax_vec, Graph, JointMixer, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NumError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("graph already consumed by a previous backward pass; reset it first")]
    GraphConsumed,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[cfg(test)]
mod tests;
