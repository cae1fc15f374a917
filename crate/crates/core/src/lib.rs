//! Dense tensor arithmetic with reverse-mode differentiation.
//!
//! The engine is deliberately small: tensors are immutable flat buffers with a
//! shape, and every differentiable operation pushes one record onto a [`Tape`].
//! Calling [`Tape::backward`] walks the records in reverse and returns a map
//! from parameter name to gradient. Precision is a type parameter — `f32` for
//! training throughput, `f64` for finite-difference verification.

pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod real;
pub mod seeds;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use ops::{gelu_scalar, mm2d, softmax_rows, BinaryKind, ReduceKind, UnaryKind};
pub use real::{Dtype, Real};
pub use tape::{GradSink, GradientMap, NodeId, Tape, TapeCtx, TapeOp};
pub use tensor::Tensor;
