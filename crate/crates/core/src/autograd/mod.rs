//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod check;
mod kernels;
mod tape;
mod tensor;

pub use check::{grad_check, grad_check_many, GradCheckReport};
pub use tape::{sigmoid, softplus, Gradients, Tape, Unary, Var, LN_FLOOR};
pub use tensor::Tensor;
