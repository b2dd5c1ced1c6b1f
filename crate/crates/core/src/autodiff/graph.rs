use std::collections::BTreeMap;
use std::sync::Arc;

use super::ops::{self, Aux, OpKind};
use super::tensor::Tensor;
use super::ParameterStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Source {
    Constant,
    Param(String),
    Op(OpKind, Vec<NodeId>, Aux),
}

#[derive(Debug)]
struct Node {
    source: Source,
    value: Arc<Tensor>,
}

/// Append-only record of a forward computation.
///
/// Inputs always precede the nodes that consume them, so a reverse sweep over
/// the node list is a valid topological order for backpropagation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<&'static str>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: BTreeMap<String, Tensor>,
}

impl Gradients {
    /// Gradient of the loss with respect to any node, if the node is on a path to the loss.
    pub fn node(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.params
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, source: Source, value: Arc<Tensor>) -> NodeId {
        self.nodes.push(Node { source, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "constant" });
        }
        Ok(self.push(Source::Constant, Arc::new(value)))
    }

    pub fn scalar(&mut self, value: f64) -> Result<NodeId> {
        self.constant(Tensor::scalar(value))
    }

    /// Leaf whose gradient is reported under `name`.
    pub fn param(&mut self, name: &str, value: Arc<Tensor>) -> NodeId {
        self.push(Source::Param(name.to_owned()), value)
    }

    pub fn param_from(&mut self, store: &ParameterStore, name: &str) -> Result<NodeId> {
        let value = store.shared(name)?;
        Ok(self.param(name, value))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Record `kind` applied to `inputs`, computing its forward value.
    pub fn apply(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        let (value, aux) = {
            let values: Vec<&Tensor> = inputs.iter().map(|id| &*self.nodes[id.0].value).collect();
            ops::forward(&kind, &values)?
        };
        Ok(self.push(Source::Op(kind, inputs.to_vec(), aux), Arc::new(value)))
    }

    /// Testing hook: scales the backward rule of the named op by 1.5.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, op_name: &'static str) {
        self.fault = Some(op_name);
    }

    /// Reverse sweep from a scalar `loss`. Each node is visited exactly once.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(Error::shape("backward", &[loss_value.shape()]));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Source::Op(kind, inputs, aux) = &self.nodes[idx].source else {
                continue;
            };
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let values: Vec<&Tensor> = inputs.iter().map(|id| &*self.nodes[id.0].value).collect();
            let mut input_grads = ops::backward(kind, &values, &self.nodes[idx].value, aux, &g);
            if self.fault == Some(kind.name()) {
                for ig in input_grads.iter_mut().flatten() {
                    *ig = ig.map(|v| v * 1.5);
                }
            }
            for (input, ig) in inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&ig),
                    slot @ None => *slot = Some(ig),
                }
            }
            grads[idx] = Some(g);
        }

        let mut params: BTreeMap<String, Tensor> = BTreeMap::new();
        for (node, grad) in self.nodes.iter().zip(&grads) {
            if let (Source::Param(name), Some(g)) = (&node.source, grad) {
                match params.get_mut(name) {
                    Some(acc) => acc.add_assign(g),
                    None => {
                        params.insert(name.clone(), g.clone());
                    }
                }
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    // Convenience wrappers over `apply`.

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Transpose, &[a])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        self.apply(OpKind::Scale(s), &[a])
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        self.apply(OpKind::AddScalar(s), &[a])
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.scale(a, -1.0)
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.neg(a)?;
        self.add_scalar(n, 1.0)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Tanh, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sigmoid, &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Exp, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Log, &[a])
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sqrt, &[a])
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Square, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sum, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Mean, &[a])
    }

    pub fn softmax_masked(&mut self, a: NodeId, mask: Vec<bool>) -> Result<NodeId> {
        self.apply(OpKind::SoftmaxMasked(mask), &[a])
    }

    pub fn max_pool(&mut self, a: NodeId, axis: usize, mask: Option<Vec<bool>>) -> Result<NodeId> {
        self.apply(OpKind::MaxPool { axis, mask }, &[a])
    }

    pub fn conv1d(&mut self, signal: NodeId, kernel: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Conv1d, &[signal, kernel])
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.apply(OpKind::Concat, parts)
    }

    pub fn gather_rows(&mut self, table: NodeId, ids: Vec<usize>) -> Result<NodeId> {
        self.apply(OpKind::GatherRows(ids), &[table])
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.apply(OpKind::SliceRows { start, len }, &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.apply(OpKind::Reshape(shape), &[a])
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        self.apply(OpKind::Clamp { lo, hi }, &[a])
    }

    pub fn detach(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Detach, &[a])
    }
}
