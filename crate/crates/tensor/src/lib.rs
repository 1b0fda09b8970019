//! Dense `f64` tensors with a reverse-mode automatic differentiation tape.
//!
//! The engine is deliberately small: every tensor is rank 1 or rank 2 in
//! practice, operations are recorded on a [`Tape`] as they run, and
//! [`Tape::backward`] replays the recording in reverse to accumulate
//! gradients. [`Adam`] consumes those gradients and [`checkpoint`] persists
//! named parameter tensors.

mod adam;
pub mod checkpoint;
mod error;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig, AdamState};
pub use error::TensorError;
pub use tape::{Tape, Var, BCE_CLAMP, LAYERNORM_EPS};
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, TensorError>;
