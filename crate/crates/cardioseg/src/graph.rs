//! Acyclic op graph: forward traces and reverse-mode backward.
//!
//! A [`Graph`] is a topologically ordered list of nodes; every node's inputs
//! point at earlier nodes, so acyclicity holds by construction and one
//! reverse sweep visits producers after all their consumers. Parameters are
//! not owned by the graph: nodes look them up by name through
//! [`ParamSource`], and backward accumulates per-name gradients into a
//! [`GradStore`] that mirrors the store layout.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::ops::{self, DropoutMask, OpError, PoolArgmax};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Input,
    Conv { stride: usize, pad: usize },
    Deconv { stride: usize },
    Pool { kernel: usize, stride: usize },
    Relu,
    Mvn,
    Dropout { ratio: f64 },
    Add,
    /// Center-crops `inputs[0]` to the spatial size of `inputs[1]`; the
    /// reference input only supplies a shape and receives no gradient.
    Crop,
    Softmax,
}

impl OpKind {
    pub fn has_params(&self) -> bool {
        matches!(self, OpKind::Conv { .. } | OpKind::Deconv { .. })
    }

    fn arity(&self) -> usize {
        match self {
            OpKind::Input => 0,
            OpKind::Add | OpKind::Crop => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    pub kind: OpKind,
    pub inputs: Vec<usize>,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node {node} ({name}): {source}")]
    Op {
        node: usize,
        name: String,
        source: OpError,
    },
    #[error("node {node} ({name}) references node {reference}, which is not an earlier node")]
    BadReference {
        node: usize,
        name: String,
        reference: usize,
    },
    #[error("node {node} ({name}) expects {expect} inputs, has {got}")]
    BadArity {
        node: usize,
        name: String,
        expect: usize,
        got: usize,
    },
    #[error("no parameters named {0} in the store")]
    MissingParams(String),
    #[error("dropout in train mode requires a random generator")]
    MissingRng,
    #[error("graph has no input node")]
    NoInput,
}

/// Read access to named (weight, bias) pairs during execution.
pub trait ParamSource<T> {
    fn params(&self, name: &str) -> Option<(&Tensor<T>, &[T])>;
}

impl<T: Scalar> ParamSource<T> for BTreeMap<String, (Tensor<T>, Vec<T>)> {
    fn params(&self, name: &str) -> Option<(&Tensor<T>, &[T])> {
        self.get(name).map(|(w, b)| (w, b.as_slice()))
    }
}

/// Per-parameter gradients keyed by layer name, in deterministic order.
#[derive(Clone, Debug, Default)]
pub struct GradStore<T> {
    grads: BTreeMap<String, (Tensor<T>, Vec<T>)>,
}

impl<T: Scalar> GradStore<T> {
    pub fn new() -> Self {
        GradStore {
            grads: BTreeMap::new(),
        }
    }

    pub fn accumulate(&mut self, name: &str, dw: Tensor<T>, db: Vec<T>) {
        match self.grads.get_mut(name) {
            Some((w, b)) => {
                for (acc, v) in w.data_mut().iter_mut().zip(dw.data()) {
                    *acc += *v;
                }
                for (acc, v) in b.iter_mut().zip(&db) {
                    *acc += *v;
                }
            }
            None => {
                self.grads.insert(name.to_string(), (dw, db));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<(&Tensor<T>, &[T])> {
        self.grads.get(name).map(|(w, b)| (w, b.as_slice()))
    }

    /// Multiplies every gradient by `factor` (batch averaging).
    pub fn scale(&mut self, factor: T) {
        for (w, b) in self.grads.values_mut() {
            for v in w.data_mut() {
                *v *= factor;
            }
            for v in b.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &(Tensor<T>, Vec<T>))> {
        self.grads.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Saved forward context, consumed exactly once by backward.
#[derive(Clone, Debug)]
enum OpCtx {
    None,
    Pool(PoolArgmax),
    Dropout(DropoutMask),
}

/// All node outputs plus saved contexts from one forward pass.
pub struct Trace<T> {
    outputs: Vec<Tensor<T>>,
    ctxs: Vec<OpCtx>,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self, node: usize) -> &Tensor<T> {
        &self.outputs[node]
    }

    pub fn last(&self) -> &Tensor<T> {
        self.outputs.last().expect("trace of empty graph")
    }
}

pub struct BackwardResult<T> {
    pub param_grads: GradStore<T>,
    pub input_grad: Option<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    input: usize,
}

impl Graph {
    pub fn new(nodes: Vec<Node>) -> Result<Self, GraphError> {
        let mut input = None;
        for (i, node) in nodes.iter().enumerate() {
            let expect = node.kind.arity();
            if node.inputs.len() != expect {
                return Err(GraphError::BadArity {
                    node: i,
                    name: node.name.clone(),
                    expect,
                    got: node.inputs.len(),
                });
            }
            for &r in &node.inputs {
                if r >= i {
                    return Err(GraphError::BadReference {
                        node: i,
                        name: node.name.clone(),
                        reference: r,
                    });
                }
            }
            if node.kind == OpKind::Input && input.is_none() {
                input = Some(i);
            }
        }
        let input = input.ok_or(GraphError::NoInput)?;
        Ok(Graph { nodes, input })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn input_node(&self) -> usize {
        self.input
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    fn op_err(&self, node: usize, source: OpError) -> GraphError {
        GraphError::Op {
            node,
            name: self.nodes[node].name.clone(),
            source,
        }
    }

    fn lookup<'p, T: Scalar, P: ParamSource<T>>(
        &self,
        params: &'p P,
        name: &str,
    ) -> Result<(&'p Tensor<T>, &'p [T]), GraphError> {
        params
            .params(name)
            .ok_or_else(|| GraphError::MissingParams(name.to_string()))
    }

    /// Executes the graph on one input tensor. Dropout draws from `rng` in
    /// train mode and is an identity in eval mode.
    pub fn forward<T: Scalar, P: ParamSource<T>, R: Rng>(
        &self,
        params: &P,
        input: &Tensor<T>,
        train: bool,
        mut rng: Option<&mut R>,
    ) -> Result<Trace<T>, GraphError> {
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        let mut ctxs: Vec<OpCtx> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let mut ctx = OpCtx::None;
            let out = match &node.kind {
                OpKind::Input => input.clone(),
                OpKind::Conv { stride, pad } => {
                    let (w, b) = self.lookup(params, &node.name)?;
                    ops::conv2d(&outputs[node.inputs[0]], w, b, *stride, *pad)
                        .map_err(|e| self.op_err(i, e))?
                }
                OpKind::Deconv { stride } => {
                    let (w, b) = self.lookup(params, &node.name)?;
                    ops::transposed_conv2d(&outputs[node.inputs[0]], w, b, *stride)
                        .map_err(|e| self.op_err(i, e))?
                }
                OpKind::Pool { kernel, stride } => {
                    let (out, argmax) = ops::maxpool2d(&outputs[node.inputs[0]], *kernel, *stride)
                        .map_err(|e| self.op_err(i, e))?;
                    ctx = OpCtx::Pool(argmax);
                    out
                }
                OpKind::Relu => ops::relu(&outputs[node.inputs[0]]),
                OpKind::Mvn => {
                    ops::mvn_layer(&outputs[node.inputs[0]]).map_err(|e| self.op_err(i, e))?
                }
                OpKind::Dropout { ratio } => {
                    if train {
                        let rng = rng.as_deref_mut().ok_or(GraphError::MissingRng)?;
                        let (out, mask) = ops::dropout_train(&outputs[node.inputs[0]], *ratio, rng)
                            .map_err(|e| self.op_err(i, e))?;
                        ctx = OpCtx::Dropout(mask);
                        out
                    } else {
                        ops::dropout_eval(&outputs[node.inputs[0]], *ratio)
                            .map_err(|e| self.op_err(i, e))?
                    }
                }
                OpKind::Add => {
                    ops::elementwise_add(&outputs[node.inputs[0]], &outputs[node.inputs[1]])
                        .map_err(|e| self.op_err(i, e))?
                }
                OpKind::Crop => {
                    let like = outputs[node.inputs[1]].shape();
                    ops::center_crop_to(&outputs[node.inputs[0]], like.h, like.w)
                        .map_err(|e| self.op_err(i, e))?
                }
                OpKind::Softmax => ops::softmax_channels(&outputs[node.inputs[0]]),
            };
            outputs.push(out);
            ctxs.push(ctx);
        }
        Ok(Trace { outputs, ctxs })
    }

    /// Reverse sweep from `seed_node`, whose upstream gradient is
    /// `seed_grad`. Returns parameter gradients and the gradient at the
    /// input node (when reached).
    pub fn backward<T: Scalar, P: ParamSource<T>>(
        &self,
        params: &P,
        trace: &Trace<T>,
        seed_node: usize,
        seed_grad: Tensor<T>,
    ) -> Result<BackwardResult<T>, GraphError> {
        fn send<T: Scalar>(grads: &mut [Option<Tensor<T>>], to: usize, g: Tensor<T>) {
            match &mut grads[to] {
                Some(acc) => {
                    for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += *v;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        }

        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[seed_node] = Some(seed_grad);
        let mut param_grads = GradStore::new();

        for i in (0..=seed_node).rev() {
            let node = &self.nodes[i];
            if node.kind == OpKind::Input {
                continue; // keep the accumulated gradient for the caller
            }
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let arg = |slot: usize| -> &Tensor<T> { &trace.outputs[node.inputs[slot]] };
            match &node.kind {
                OpKind::Input => unreachable!(),
                OpKind::Conv { stride, pad } => {
                    let (w, _) = self.lookup(params, &node.name)?;
                    let (dx, dw, db) = ops::conv2d_backward(arg(0), w, &grad, *stride, *pad)
                        .map_err(|e| self.op_err(i, e))?;
                    param_grads.accumulate(&node.name, dw, db);
                    send(&mut grads, node.inputs[0], dx);
                }
                OpKind::Deconv { stride } => {
                    let (w, _) = self.lookup(params, &node.name)?;
                    let (dx, dw, db) = ops::transposed_conv2d_backward(arg(0), w, &grad, *stride)
                        .map_err(|e| self.op_err(i, e))?;
                    param_grads.accumulate(&node.name, dw, db);
                    send(&mut grads, node.inputs[0], dx);
                }
                OpKind::Pool { .. } => {
                    let OpCtx::Pool(argmax) = &trace.ctxs[i] else {
                        unreachable!("pool forward always saves argmax");
                    };
                    send(&mut grads, node.inputs[0], ops::maxpool2d_backward(argmax, &grad));
                }
                OpKind::Relu => {
                    send(&mut grads, node.inputs[0], ops::relu_backward(arg(0), &grad));
                }
                OpKind::Mvn => {
                    send(&mut grads, node.inputs[0], ops::mvn_layer_backward(arg(0), &grad));
                }
                OpKind::Dropout { .. } => {
                    let g = match &trace.ctxs[i] {
                        OpCtx::Dropout(mask) => ops::dropout_backward(mask, &grad),
                        // Eval-mode dropout is an identity.
                        _ => grad,
                    };
                    send(&mut grads, node.inputs[0], g);
                }
                OpKind::Add => {
                    send(&mut grads, node.inputs[0], grad.clone());
                    send(&mut grads, node.inputs[1], grad);
                }
                OpKind::Crop => {
                    let data_shape = arg(0).shape();
                    send(
                        &mut grads,
                        node.inputs[0],
                        ops::center_crop_to_backward(data_shape, &grad),
                    );
                }
                OpKind::Softmax => {
                    // dx_c = s_c * (g_c - sum_k g_k s_k) per pixel.
                    let s = &trace.outputs[i];
                    let shape = s.shape();
                    let plane = shape.hw();
                    let mut dx = Tensor::zeros(shape);
                    for n in 0..shape.n {
                        for p in 0..plane {
                            let mut dot = T::ZERO;
                            for c in 0..shape.c {
                                let idx = (n * shape.c + c) * plane + p;
                                dot += grad.data()[idx] * s.data()[idx];
                            }
                            for c in 0..shape.c {
                                let idx = (n * shape.c + c) * plane + p;
                                dx.data_mut()[idx] = s.data()[idx] * (grad.data()[idx] - dot);
                            }
                        }
                    }
                    send(&mut grads, node.inputs[0], dx);
                }
            }
        }

        let input_grad = grads[self.input].take();
        Ok(BackwardResult {
            param_grads,
            input_grad,
        })
    }
}
