//! Define-by-run reverse-mode differentiation over dense `f64` tensors, and
//! the Adam optimizer.
//!
//! A [`Tape`] records every operation applied to [`Var`]s; [`Tape::backward`]
//! sweeps it in reverse and returns the gradient for every leaf registered
//! with [`Tape::param`]. Heavy kernels elsewhere in the crate (rasterization,
//! posing, the Poisson solve) plug in through [`Tape::custom`] with their own
//! reverse pass.

mod adam;
mod gradcheck;
pub mod ops;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamError, AdamState};
pub use gradcheck::{finite_diff_check, RELATIVE_FLOOR};
pub use ops::{barycentric_interp, bilinear_sample};
pub use tape::{BackwardFn, Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite value reached node {node} during the reverse sweep")]
    NonFinite { node: usize },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
}
