//! Dense tensor arithmetic with reverse-mode gradients, a finite-difference
//! checker, and an Adam update rule. Everything downstream (encoders,
//! losses, training) builds on this substrate.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::finite_diff_check;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{dot_slices, log_sigmoid, sigmoid, softplus, Tensor};
