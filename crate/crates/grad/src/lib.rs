//! Minimal f64 autodiff used by the face-generation workspace.
//!
//! Everything is double precision and strictly deterministic: kernels run
//! in fixed element order, so two identical programs produce bitwise
//! identical tapes.

pub mod check;
pub mod tape;
pub mod tensor;

pub use tape::{Tape, Var, SENTINEL};
pub use tensor::Tensor;
