//! Minimal dense-tensor reverse-mode autodiff.
//!
//! Single-threaded per tape; tensors detached from any tape are plain
//! immutable values. Double precision throughout: downstream identities
//! (additivity, Shapley closed form) are asserted at 1e-8 and tighter.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{stable_sigmoid, Tape, Var};
pub use tensor::Tensor;
