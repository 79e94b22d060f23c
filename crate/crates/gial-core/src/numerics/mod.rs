//! Dense matrix arithmetic with reverse-mode differentiation, the Adam
//! optimizer, and a finite-difference gradient oracle. Everything else in the
//! crate computes on this substrate; all arithmetic is 64-bit.

mod adam;
mod gradcheck;
mod matrix;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_with_step, GradCheck, DEFAULT_STEP};
pub use matrix::Matrix;
pub use tape::{Tape, Tensor, TensorId};
