//! Minimal dense tensors with reverse-mode automatic differentiation.
//!
//! Forward operations are methods on [`Tape`]; each returns a [`Var`]
//! naming its output. [`Tape::backward`] sweeps the record in reverse and
//! leaves a gradient on every tracked leaf. The operator set is exactly
//! what a small convolution + attention classifier needs: 2-D convolution,
//! group/layer normalization, ReLU, max and adaptive average pooling,
//! affine maps, softmax, (multi-head) scaled dot-product attention and
//! cross-entropy. [`AdamState`] performs the parameter update.
//!
//! Tensors default to `f32`; every operation is generic over [`Scalar`] so
//! gradient checks can run in `f64`. Kernels are single-threaded with a
//! fixed reduction order, so identical inputs give bitwise-identical
//! results.

mod adam;
mod error;
pub mod gradcheck;
mod ops;
mod scalar;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{AutodiffError, Result};
pub use ops::activation::softmax_rows;
pub use ops::attention::{Attention, MhaVars};
pub use ops::loss::{LossMode, PROB_CLAMP};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
