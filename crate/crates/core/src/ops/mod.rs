//! The built-in differentiable operation set.
//!
//! Each submodule implements forward kernels plus a [`crate::TapeOp`] for the
//! backward pass, and hangs a convenience method off [`crate::Tape`].

mod elementwise;
mod matmul;
mod reduce;
mod shape;
mod softmax;

pub use elementwise::{gelu_scalar, BinaryKind, UnaryKind};
pub use matmul::mm2d;
pub use reduce::ReduceKind;
pub use softmax::softmax_rows;
