//! Declarative network descriptions, parameter stores, and inference.
//!
//! A [`NetworkSpec`] is an ordered list of named layers loaded from (or
//! serialized to) a line-oriented text format, so alternate architectures
//! can be tested without code changes. Layer identity is by name, which is
//! what makes partial weight transplant for transfer learning possible.

mod infer;
mod init;
mod spec;
mod weights;

pub use infer::{argmax_mask, compile, forward, CompiledNet};
pub use init::init_xavier;
pub use spec::{count_params, default_spec, LayerKind, LayerSpec, NetworkSpec, Resolved,
               ResolvedLayer};
pub use weights::{load_weights, LayerParams, TransplantReport, WeightStore, WEIGHT_MAGIC};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate layer name {0}")]
    DuplicateName(String),
    #[error("layer {layer} references unknown or later layer {reference}")]
    UnknownReference { layer: String, reference: String },
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error("weight file: {0}")]
    WeightFormat(String),
    #[error("weight shape conflict for {layer}: store has {found}, network needs {expected}")]
    ShapeConflict {
        layer: String,
        expected: String,
        found: String,
    },
    #[error("strict load: layer {0} missing from weight file")]
    MissingLayer(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
