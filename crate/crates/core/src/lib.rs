//! Recurrent semantic segmentation with an additive logit canvas.
//!
//! A convolutional encoder computes image features once; a stack of three
//! convolutional LSTM layers then reads the features together with the current
//! canvas of per-class logits and adds its output back onto the canvas. The argmax of
//! the upsampled canvas is a valid segmentation after every iteration, so inference can
//! stop at any budget.

pub mod checkpoint;
pub mod convlstm;
pub mod data;
pub mod error;
pub mod flops;
pub mod gemm;
pub mod graph;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod psd;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{FlopCount, Gradients, Graph, Var};
pub use tensor::{Shape, Tensor};

/// Label value excluded from losses and metrics.
pub const DEFAULT_IGNORE_LABEL: u8 = 255;
