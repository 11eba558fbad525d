//! Dense tensors, reverse-mode differentiation and a finite-difference checker.

mod check;
mod tape;
mod tensor;

pub use check::finite_diff_check;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{argmax, dot, log_softmax_at, masked_softmax, matmul, matvec, sigmoid, Tensor};
