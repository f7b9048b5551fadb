//! Layer operations with exact reverse-mode gradients.
//!
//! Each op is a pure function pair: a forward that produces the output (and,
//! where needed, a context such as pooling argmax indices or a dropout mask)
//! and a backward that consumes exactly that context plus the upstream
//! gradient. The op graph in [`crate::graph`] composes these into networks.

mod conv;
mod dropout;
mod loss;
mod norm;
mod pool;
mod shape_ops;

pub use conv::{conv2d, conv2d_backward, conv_output_size, transposed_conv2d, ParamGrads,
               transposed_conv2d_backward};
pub use dropout::{dropout_backward, dropout_eval, dropout_train, DropoutMask};
pub use loss::{softmax_channels, softmax_xent_pixelwise};
pub use norm::{mvn_layer, mvn_layer_backward};
pub use pool::{maxpool2d, maxpool2d_backward, pool_output_size, PoolArgmax};
pub use shape_ops::{center_crop_to, center_crop_to_backward, crop_offsets, elementwise_add,
                    relu, relu_backward};

use crate::tensor::Shape;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OpError {
    #[error("channel mismatch: input has {input} channels, weights expect {expect}")]
    ChannelMismatch { input: usize, expect: usize },
    #[error(
        "output dimension would be empty: input {h}x{w}, kernel {kh}x{kw}, stride {stride}, pad {pad}"
    )]
    EmptyOutput {
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    },
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: Shape, right: Shape },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{0}")]
    InvalidArgument(String),
}

#[cfg(test)]
pub(crate) mod gradcheck;
