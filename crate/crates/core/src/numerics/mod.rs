//! Dense `f64` tensors with reverse-mode differentiation.
//!
//! Every operation that takes a gradient-tracking input records a local
//! gradient rule; [`Tensor::backward`] replays them in reverse topological
//! order and sums gradients into every reachable tensor.

mod audit;
mod conv;
mod elementwise;
mod fft;
mod gradcheck;
mod layout;
mod linalg;
mod reduce;
mod tensor;

pub use audit::{gradient_audit, OpCheck};
pub use elementwise::{broadcast_shape, ElementwiseOp, Operand};
pub use fft::fft2;
pub(crate) use fft::fft2_planes;
pub use gradcheck::{gradient_check, gradient_check_many, DEFAULT_STEP};
pub use tensor::{grad_enabled, no_grad, ComputationRecord, RecordEntry, Tensor};

pub use rustfft::num_complex::Complex64;

#[cfg(test)]
mod grad_tests;
