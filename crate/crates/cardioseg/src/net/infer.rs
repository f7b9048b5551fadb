//! Whole-image inference.

use rand_chacha::ChaCha8Rng;

use super::{NetError, NetworkSpec, WeightStore};
use crate::graph::Graph;
use crate::tensor::{Scalar, Tensor};

/// A spec lowered to its executable graph, with the head nodes located.
pub struct CompiledNet {
    pub graph: Graph,
    /// Node producing class scores (the input of the softmax head, or the
    /// final node when no softmax is declared).
    pub logits: usize,
    /// Softmax head, when present.
    pub prob: Option<usize>,
}

pub fn compile(spec: &NetworkSpec) -> Result<CompiledNet, NetError> {
    let graph = spec.to_graph()?;
    let prob = graph
        .nodes()
        .iter()
        .position(|n| n.kind == crate::graph::OpKind::Softmax);
    let logits = match prob {
        Some(p) => graph.nodes()[p].inputs[0],
        None => graph.nodes().len() - 1,
    };
    Ok(CompiledNet { graph, logits, prob })
}

/// Eval-mode forward pass producing the per-pixel class probability heatmap,
/// spatially aligned with the input.
pub fn forward<T: Scalar>(
    spec: &NetworkSpec,
    store: &WeightStore<T>,
    image: &Tensor<T>,
) -> Result<Tensor<T>, NetError> {
    let compiled = compile(spec)?;
    let trace = compiled
        .graph
        .forward(store, image, false, None::<&mut ChaCha8Rng>)?;
    Ok(trace.output(compiled.prob.unwrap_or(compiled.logits)).clone())
}

/// Per-pixel argmax over the class axis; ties resolve to the lowest class.
pub fn argmax_mask<T: Scalar>(heatmap: &Tensor<T>) -> Vec<u8> {
    let s = heatmap.shape();
    let plane = s.hw();
    let mut mask = vec![0u8; s.n * plane];
    for n in 0..s.n {
        for p in 0..plane {
            let mut best_c = 0usize;
            let mut best = heatmap.data()[(n * s.c) * plane + p];
            for c in 1..s.c {
                let v = heatmap.data()[(n * s.c + c) * plane + p];
                if v > best {
                    best = v;
                    best_c = c;
                }
            }
            mask[n * plane + p] = best_c as u8;
        }
    }
    mask
}
