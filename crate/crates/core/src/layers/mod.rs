//! Forward and backward passes for every layer the networks use.

mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod head;
mod pool;
mod relu;

pub use batchnorm::{BatchNorm, BnCache};
pub use conv::Conv2d;
pub use dense::{softmax_rows, DenseSoftmax};
pub use dropout::Dropout;
pub use head::{HeadKind, PoolingHead};
pub use pool::AvgPool;
pub use relu::{relu, relu_backward};

use thiserror::Error;

use crate::tensor::TensorError;

/// Whether a pass updates batch statistics / applies dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Error)]
pub enum LayerError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("channel mismatch: input has {input} channels, layer expects {expected}")]
    ChannelMismatch { input: usize, expected: usize },
    #[error("expected rank-{expected} input, got shape {shape:?}")]
    BadRank { expected: usize, shape: Vec<usize> },
    #[error("batch of size 1 is degenerate for train-mode batch normalization")]
    DegenerateBatch,
    #[error("kernel shape {kernel:?} does not match feature map shape {input:?}")]
    KernelMismatch {
        kernel: Vec<usize>,
        input: Vec<usize>,
    },
}
