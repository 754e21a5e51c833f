//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! The engine is deliberately small: row-major [`Tensor`] values, a
//! [`Graph`] that records operations in construction (= topological) order,
//! and a backward pass that replays them in exact reverse order. All math is
//! 64-bit so the finite-difference gradient checks in the test suite are
//! meaningful. No op lets a NaN or infinity escape without an error.

mod conv;
mod graph;
mod tensor;

pub use graph::{BnMode, BnStats, Graph, NodeId};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors raised by tensor construction and graph operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements, got {actual}")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape {shape:?} has a zero extent")]
    ZeroExtent { shape: Vec<usize> },
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("conv2d: kernel {kernel:?} does not fit padded input {input:?} (padding {padding})")]
    KernelTooLarge {
        kernel: Vec<usize>,
        input: Vec<usize>,
        padding: usize,
    },
    #[error("conv2d: input has {input} channels but kernel expects {kernel}")]
    ChannelMismatch { input: usize, kernel: usize },
    #[error("conv2d: stride must be positive")]
    ZeroStride,
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: input contains a non-finite value")]
    NonFiniteInput { op: &'static str },
    #[error("backward expects a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("batch_norm in train mode needs at least 2 values per channel, got {count}")]
    DegenerateVariance { count: usize },
}
