//! Tape-based reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is an append-only list of nodes. Each node stores the operation
//! that produced it, the ids of its inputs and its forward value, so inputs
//! always precede the node that consumes them. [`Graph::backward`] walks the
//! tape in reverse, accumulating adjoints, and returns a [`GradientMap`] holding
//! one gradient per trainable leaf.

mod gradcheck;

pub use gradcheck::{finite_difference_check, relative_error};

use crate::error::{Error, Result};
use crate::ops::{self, Activation, FlopTally, NormStats, Padding};
use crate::scalar::Scalar;
use crate::tensor::{broadcast_map, Axis, BinaryOp, ReduceOp, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds, with whatever context their adjoint needs.
#[derive(Clone, Debug, PartialEq)]
pub enum Op<S: Scalar> {
    /// Input or parameter. Only trainable leaves appear in a [`GradientMap`].
    Leaf { trainable: bool },
    /// Elementwise binary operation; the right operand may broadcast.
    Binary(BinaryOp),
    MatMul,
    Concat { axis: usize },
    /// One half of [`Tensor::split_half`]; `second` selects the upper half.
    SplitHalf { axis: usize, second: bool },
    Reduce { op: ReduceOp, axis: Axis },
    Reshape,
    Permute { axes: Vec<usize> },
    Conv1d { padding: Padding },
    Conv2d { padding: Padding },
    InstanceNorm { eps: S, stats: NormStats<S> },
    Activation(Activation),
    Dense,
    TimeMix,
    BceWithLogits { labels: Vec<S> },
}

impl<S: Scalar> Op<S> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Binary(BinaryOp::Add) => "add",
            Op::Binary(BinaryOp::Sub) => "sub",
            Op::Binary(BinaryOp::Mul) => "mul",
            Op::Binary(BinaryOp::Div) => "div",
            Op::MatMul => "matmul",
            Op::Concat { .. } => "concat",
            Op::SplitHalf { .. } => "split_half",
            Op::Reduce {
                op: ReduceOp::Sum, ..
            } => "sum",
            Op::Reduce {
                op: ReduceOp::Mean, ..
            } => "mean",
            Op::Reshape => "reshape",
            Op::Permute { .. } => "permute",
            Op::Conv1d { .. } => "conv1d",
            Op::Conv2d { .. } => "conv2d",
            Op::InstanceNorm { .. } => "instance_norm",
            Op::Activation(Activation::Relu) => "relu",
            Op::Activation(Activation::Gelu) => "gelu",
            Op::Activation(Activation::Tanh) => "tanh",
            Op::Activation(Activation::Sigmoid) => "sigmoid",
            Op::Dense => "dense",
            Op::TimeMix => "time_mix",
            Op::BceWithLogits { .. } => "bce_with_logits",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TapeNode<S: Scalar> {
    pub op: Op<S>,
    pub inputs: Vec<NodeId>,
    pub value: Tensor<S>,
}

#[derive(Clone, Debug)]
pub struct Graph<S: Scalar> {
    nodes: Vec<TapeNode<S>>,
    flops: FlopTally,
}

/// Gradients of a scalar loss with respect to every trainable leaf of a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMap<S: Scalar> {
    entries: Vec<(NodeId, Tensor<S>)>,
}

impl<S: Scalar> GradientMap<S> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.entries
            .binary_search_by_key(&id, |(n, _)| *n)
            .ok()
            .map(|i| &self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor<S>)> {
        self.entries.iter().map(|(id, g)| (*id, g))
    }
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            flops: FlopTally::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Result<&TapeNode<S>> {
        self.nodes.get(id.0).ok_or(Error::DanglingNode(id.0))
    }

    pub fn nodes(&self) -> &[TapeNode<S>] {
        &self.nodes
    }

    /// Forward value of a node. Panics on an id from another graph that is out of range.
    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn flops(&self) -> FlopTally {
        self.flops
    }

    /// Appends a node whose inputs must already be on the tape.
    pub fn record(&mut self, op: Op<S>, inputs: &[NodeId], value: Tensor<S>) -> Result<NodeId> {
        if let Some(bad) = inputs.iter().find(|i| i.0 >= self.nodes.len()) {
            return Err(Error::DanglingNode(bad.0));
        }
        self.nodes.push(TapeNode {
            op,
            inputs: inputs.to_vec(),
            value,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn parameter(&mut self, value: Tensor<S>) -> NodeId {
        self.push_leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<S>, trainable: bool) -> NodeId {
        self.nodes.push(TapeNode {
            op: Op::Leaf { trainable },
            inputs: Vec::new(),
            value,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn get(&self, id: NodeId) -> Result<&Tensor<S>> {
        self.nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or(Error::DanglingNode(id.0))
    }

    pub fn binary(&mut self, op: BinaryOp, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = Tensor::elementwise(op, self.get(a)?, self.get(b)?)?;
        self.record(Op::Binary(op), &[a, b], v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.get(a)?, self.get(b)?);
        let v = av.matmul(bv)?;
        self.flops.matmul += 2 * (av.len() * bv.shape()[1]) as u64;
        self.record(Op::MatMul, &[a, b], v)
    }

    pub fn concat(&mut self, axis: usize, parts: &[NodeId]) -> Result<NodeId> {
        let values = parts
            .iter()
            .map(|&p| self.get(p))
            .collect::<Result<Vec<_>>>()?;
        let v = Tensor::concat(axis, &values)?;
        self.record(Op::Concat { axis }, parts, v)
    }

    pub fn split_half(&mut self, axis: usize, x: NodeId) -> Result<(NodeId, NodeId)> {
        let (lo, hi) = self.get(x)?.split_half(axis)?;
        let a = self.record(Op::SplitHalf { axis, second: false }, &[x], lo)?;
        let b = self.record(Op::SplitHalf { axis, second: true }, &[x], hi)?;
        Ok((a, b))
    }

    pub fn reduce(&mut self, op: ReduceOp, axis: Axis, x: NodeId) -> Result<NodeId> {
        let v = self.get(x)?.reduce(op, axis)?;
        self.record(Op::Reduce { op, axis }, &[x], v)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.reduce(ReduceOp::Sum, Axis::All, x)
    }

    pub fn mean(&mut self, axis: Axis, x: NodeId) -> Result<NodeId> {
        self.reduce(ReduceOp::Mean, axis, x)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.get(x)?.reshape(shape)?;
        self.record(Op::Reshape, &[x], v)
    }

    pub fn permute(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        let v = self.get(x)?.permute(axes)?;
        self.record(
            Op::Permute {
                axes: axes.to_vec(),
            },
            &[x],
            v,
        )
    }

    pub fn conv1d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        bias: NodeId,
        padding: Padding,
    ) -> Result<NodeId> {
        let (v, flops) = ops::conv1d(self.get(x)?, self.get(kernel)?, self.get(bias)?, padding)?;
        self.flops.convolution += flops;
        self.record(Op::Conv1d { padding }, &[x, kernel, bias], v)
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        bias: NodeId,
        padding: Padding,
    ) -> Result<NodeId> {
        let (v, flops) = ops::conv2d(self.get(x)?, self.get(kernel)?, self.get(bias)?, padding)?;
        self.flops.convolution += flops;
        self.record(Op::Conv2d { padding }, &[x, kernel, bias], v)
    }

    pub fn instance_norm(
        &mut self,
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        eps: S,
    ) -> Result<NodeId> {
        let (v, stats) =
            ops::instance_norm(self.get(x)?, self.get(scale)?, self.get(shift)?, eps)?;
        self.record(Op::InstanceNorm { eps, stats }, &[x, scale, shift], v)
    }

    pub fn activation(&mut self, kind: Activation, x: NodeId) -> Result<NodeId> {
        let v = kind.forward(self.get(x)?)?;
        self.record(Op::Activation(kind), &[x], v)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.activation(Activation::Relu, x)
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        self.activation(Activation::Gelu, x)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.activation(Activation::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.activation(Activation::Sigmoid, x)
    }

    pub fn dense(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let (v, flops) = ops::dense(self.get(x)?, self.get(weight)?, self.get(bias)?)?;
        self.flops.projection += flops;
        self.record(Op::Dense, &[x, weight, bias], v)
    }

    pub fn time_mix(&mut self, v: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let (out, flops) = ops::time_mix(self.get(v)?, self.get(weight)?, self.get(bias)?)?;
        self.flops.time_mixing += flops;
        self.record(Op::TimeMix, &[v, weight, bias], out)
    }

    /// [`ops::bce_with_logits_excess`] as a node; differentiates like [`Graph::bce_with_logits`].
    pub fn bce_with_logits_excess(
        &mut self,
        logits: NodeId,
        labels: &[S],
        reference: &Tensor<S>,
    ) -> Result<NodeId> {
        let loss = ops::bce_with_logits_excess(self.get(logits)?, labels, reference)?;
        self.record(
            Op::BceWithLogits {
                labels: labels.to_vec(),
            },
            &[logits],
            Tensor::scalar(loss)?,
        )
    }

    /// Mean sigmoid cross-entropy of `logits [B]` against `labels` in {0, 1}; shape `[1]`.
    pub fn bce_with_logits(&mut self, logits: NodeId, labels: &[S]) -> Result<NodeId> {
        let loss = ops::bce_with_logits(self.get(logits)?, labels)?;
        self.record(
            Op::BceWithLogits {
                labels: labels.to_vec(),
            },
            &[logits],
            Tensor::scalar(loss)?,
        )
    }

    /// Reverse sweep from a `[1]`-shaped loss node.
    pub fn backward(&self, loss: NodeId) -> Result<GradientMap<S>> {
        let loss_value = self.get(loss)?;
        if loss_value.shape() != [1] {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor<S>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::scalar(S::one())?);
        for idx in (0..=loss.0).rev() {
            let Some(grad) = adj[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let contributions = self.node_adjoint(node, &grad)?;
            if let Op::Leaf { .. } = node.op {
                adj[idx] = Some(grad);
                continue;
            }
            for (input, contrib) in node.inputs.iter().zip(contributions) {
                let Some(contrib) = contrib else { continue };
                let slot = &mut adj[input.0];
                *slot = Some(match slot.take() {
                    None => contrib,
                    Some(acc) => acc.add(&contrib)?,
                });
            }
        }
        let mut entries = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { trainable: true } = node.op {
                let g = match adj.get_mut(i).and_then(Option::take) {
                    Some(g) => g,
                    None => Tensor::zeros(node.value.shape())?,
                };
                entries.push((NodeId(i), g));
            }
        }
        Ok(GradientMap { entries })
    }

    /// Adjoint contributions of one node to each of its inputs.
    fn node_adjoint(&self, node: &TapeNode<S>, grad: &Tensor<S>) -> Result<Vec<Option<Tensor<S>>>> {
        let input = |k: usize| &self.nodes[node.inputs[k].0].value;
        let out = match &node.op {
            Op::Leaf { .. } => Vec::new(),
            Op::Binary(op) => {
                let (a, b) = (input(0), input(1));
                binary_adjoint(*op, a, b, grad)?
                    .into_iter()
                    .map(Some)
                    .collect()
            }
            Op::MatMul => {
                let (a, b) = (input(0), input(1));
                vec![
                    Some(grad.matmul(&b.transpose2()?)?),
                    Some(a.transpose2()?.matmul(grad)?),
                ]
            }
            Op::Concat { axis } => {
                let mut start = 0;
                let mut parts = Vec::with_capacity(node.inputs.len());
                for k in 0..node.inputs.len() {
                    let len = input(k).shape()[*axis];
                    parts.push(Some(grad.narrow(*axis, start, len)?));
                    start += len;
                }
                parts
            }
            Op::SplitHalf { axis, second } => {
                let zeros = Tensor::zeros(grad.shape())?;
                let full = if *second {
                    Tensor::concat(*axis, &[&zeros, grad])?
                } else {
                    Tensor::concat(*axis, &[grad, &zeros])?
                };
                vec![Some(full)]
            }
            Op::Reduce { op, axis } => vec![Some(reduce_adjoint(*op, *axis, input(0), grad)?)],
            Op::Reshape => vec![Some(grad.reshape(input(0).shape())?)],
            Op::Permute { axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                vec![Some(grad.permute(&inverse)?)]
            }
            Op::Conv1d { padding } => {
                ops::conv1d_backward(input(0), input(1), input(2), *padding, grad)?
                    .into_iter()
                    .map(Some)
                    .collect()
            }
            Op::Conv2d { padding } => {
                ops::conv2d_backward(input(0), input(1), input(2), *padding, grad)?
                    .into_iter()
                    .map(Some)
                    .collect()
            }
            Op::InstanceNorm { stats, .. } => {
                ops::instance_norm_backward(input(0), input(1), input(2), stats, grad)?
                    .into_iter()
                    .map(Some)
                    .collect()
            }
            Op::Activation(kind) => {
                let x = input(0);
                let y = &node.value;
                let d: Vec<S> = x
                    .data()
                    .iter()
                    .zip(y.data())
                    .zip(grad.data())
                    .map(|((&xv, &yv), &g)| g * kind.derivative(xv, yv))
                    .collect();
                vec![Some(Tensor::new(x.shape().to_vec(), d)?)]
            }
            Op::Dense => ops::dense_backward(input(0), input(1), input(2), grad)?
                .into_iter()
                .map(Some)
                .collect(),
            Op::TimeMix => ops::time_mix_backward(input(0), input(1), input(2), grad)?
                .into_iter()
                .map(Some)
                .collect(),
            Op::BceWithLogits { labels } => vec![Some(ops::bce_with_logits_backward(
                input(0),
                labels,
                grad.item()?,
            )?)],
        };
        Ok(out)
    }
}

/// Sums `grad` (shaped like `a`) down to the broadcast operand shape `b`.
fn unbroadcast<S: Scalar>(grad: &[S], a_shape: &[usize], b_shape: &[usize]) -> Result<Tensor<S>> {
    let map = broadcast_map(a_shape, b_shape)?;
    let mut out = vec![S::zero(); b_shape.iter().product()];
    for (i, &g) in grad.iter().enumerate() {
        let j = map.index(i);
        out[j] = out[j] + g;
    }
    Tensor::new(b_shape.to_vec(), out)
}

fn binary_adjoint<S: Scalar>(
    op: BinaryOp,
    a: &Tensor<S>,
    b: &Tensor<S>,
    grad: &Tensor<S>,
) -> Result<[Tensor<S>; 2]> {
    let map = broadcast_map(a.shape(), b.shape())?;
    let g = grad.data();
    let bv = |i: usize| b.data()[map.index(i)];
    let (da, db_full): (Vec<S>, Vec<S>) = match op {
        BinaryOp::Add => (g.to_vec(), g.to_vec()),
        BinaryOp::Sub => (g.to_vec(), g.iter().map(|&v| -v).collect()),
        BinaryOp::Mul => (
            g.iter().enumerate().map(|(i, &v)| v * bv(i)).collect(),
            g.iter().zip(a.data()).map(|(&v, &x)| v * x).collect(),
        ),
        BinaryOp::Div => (
            g.iter().enumerate().map(|(i, &v)| v / bv(i)).collect(),
            g.iter()
                .zip(a.data())
                .enumerate()
                .map(|(i, (&v, &x))| -v * x / (bv(i) * bv(i)))
                .collect(),
        ),
    };
    Ok([
        Tensor::new(a.shape().to_vec(), da)?,
        unbroadcast(&db_full, a.shape(), b.shape())?,
    ])
}

fn reduce_adjoint<S: Scalar>(
    op: ReduceOp,
    axis: Axis,
    x: &Tensor<S>,
    grad: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (count, data) = match axis {
        Axis::All => (x.len(), vec![grad.data()[0]; x.len()]),
        Axis::Index(ax) => {
            let shape = x.shape();
            let outer: usize = shape[..ax].iter().product();
            let inner: usize = shape[ax + 1..].iter().product();
            let n = shape[ax];
            let mut data = Vec::with_capacity(x.len());
            for o in 0..outer {
                for _ in 0..n {
                    data.extend_from_slice(&grad.data()[o * inner..(o + 1) * inner]);
                }
            }
            (n, data)
        }
    };
    let data = match op {
        ReduceOp::Sum => data,
        ReduceOp::Mean => {
            let c = S::from_count(count);
            data.into_iter().map(|v| v / c).collect()
        }
    };
    Tensor::new(x.shape().to_vec(), data)
}
