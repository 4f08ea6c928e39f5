//! Dense row-major matrices with a recording tape for reverse-mode
//! differentiation, an Adam optimizer, finite-difference gradient checks
//! and a binary checkpoint format.
//!
//! Every learnable component of the pathway model is written against
//! [`Tape`]: forward operations push a node holding the output value and
//! whatever the backward rule needs, and [`Tape::backward`] walks the
//! nodes in reverse exactly once.

mod adam;
mod checkpoint;
mod error;
mod gradcheck;
pub mod kernels;
mod params;
mod real;
pub mod sum;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader};
pub use error::{Result, TensorError};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use params::{ParamId, ParamStore};
pub use real::Real;
pub use tape::{Gradients, OpStats, Segments, Tape, Var};
pub use tensor::Tensor;

/// Slope used by every LeakyReLU in the model.
pub const LEAKY_SLOPE: f64 = 0.01;
