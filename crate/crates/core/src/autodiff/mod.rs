//! Dense reverse-mode automatic differentiation over 2-D `f64` tensors.
//!
//! A [`Tape`] records every primitive in execution order; backward
//! walks the record in reverse and accumulates gradients in that fixed
//! order, so replaying identical inputs gives bit-identical gradients.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, FLOOR};
pub use tape::{log_sum_exp, row_softmax, sigmoid, GradientMap, Tape, Var};
pub use tensor::Tensor;
