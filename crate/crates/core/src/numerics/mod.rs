//! Dense tensors, a reverse-mode gradient tape, initializers and Adam.

mod adam;
mod init;
mod tape;
mod tensor;

pub use adam::{AdamState, OptimError};
pub use init::{kaiming_bound, kaiming_uniform, uniform};
pub use tape::{log10p1, pow10m1, sigmoid, BinaryOp, Gradients, Tape, UnaryOp, Var};
pub use tensor::{matmul, Result, Tensor, TensorError};
pub(crate) use tensor::matmul_into;
