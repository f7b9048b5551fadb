//! Training, inference, and evaluation engine for fully convolutional
//! ventricle segmentation in short-axis cardiac MRI.
//!
//! The crate is organized around the lifecycle of a segmentation model:
//!
//! - [`tensor`] / [`ops`] / [`graph`]: dense N,C,H,W arrays, the layer
//!   operations used by the network, and reverse-mode differentiation
//!   through an acyclic op graph.
//! - [`net`]: declarative network descriptions, parameter initialization,
//!   weight serialization (including partial transplant for transfer
//!   learning), and whole-image inference.
//! - [`train`]: SGD with momentum, polynomial learning-rate decay, and
//!   fine-tuning from a source checkpoint.
//! - [`data`]: DICOM/PGM ingestion, contour rasterization, center cropping,
//!   mean-variance normalization, and 12-fold training augmentation.
//! - [`metrics`]: Dice, Jaccard, confusion quotients, average perpendicular
//!   distance, Hausdorff distance, good-contour percentage, and the
//!   mask-to-contour bridge needed to compute contour metrics from
//!   per-pixel predictions.
//! - [`phantom`]: deterministic synthetic ventricle-like datasets with
//!   exact ground truth, so every workflow runs without gated clinical data.

pub mod data;
pub mod graph;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod phantom;
pub mod tensor;
pub mod train;

pub use tensor::{Scalar, Shape, Tensor};
