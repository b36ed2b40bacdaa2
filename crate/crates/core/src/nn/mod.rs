//! Parameterised layers.
//!
//! Every layer records itself onto an autodiff [`Graph`] through
//! `forward_graph`, binding its parameter tensors with a [`Binder`] in the same
//! order that [`Parameters::visit`] reports them. The plain `forward` methods
//! run the same path on a throwaway graph with frozen parameters.

mod conv;
mod dense;
mod gating;
mod norm;

pub use conv::{conv_1x1, Conv1d, Conv2d, TimeConv};
pub use dense::Dense;
pub use gating::{GatingBlock, GatingModule};
pub use norm::InstanceNorm;

pub use crate::ops::{Activation, Padding};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Records parameter tensors as graph leaves and remembers their node ids in binding order.
///
/// A replaying binder instead hands out existing nodes, in order, so a layer can be
/// evaluated against parameters that were placed on the graph elsewhere.
#[derive(Debug, Default)]
pub struct Binder {
    trainable: bool,
    ids: Vec<NodeId>,
    replay: Option<std::vec::IntoIter<NodeId>>,
}

impl Binder {
    pub fn trainable() -> Self {
        Binder {
            trainable: true,
            ..Binder::default()
        }
    }

    pub fn replay(nodes: Vec<NodeId>) -> Self {
        Binder {
            replay: Some(nodes.into_iter()),
            ..Binder::default()
        }
    }

    pub fn frozen() -> Self {
        Binder::default()
    }

    pub fn bind<S: Scalar>(&mut self, g: &mut Graph<S>, t: &Tensor<S>) -> Result<NodeId> {
        if let Some(nodes) = &mut self.replay {
            let id = nodes
                .next()
                .ok_or_else(|| Error::invalid("replay binder ran out of parameter nodes"))?;
            let found = g.node(id)?.value.shape();
            if found != t.shape() {
                return Err(Error::shape(format!(
                    "replayed parameter has shape {found:?}, layer expects {:?}",
                    t.shape()
                )));
            }
            self.ids.push(id);
            return Ok(id);
        }
        let id = if self.trainable {
            g.parameter(t.clone())
        } else {
            g.constant(t.clone())
        };
        self.ids.push(id);
        Ok(id)
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

/// Named access to a layer's parameter tensors, in binding order.
pub trait Parameters<S: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor<S>));

    fn named_parameters(&self, prefix: &str) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |name, t| out.push((name, t)));
        out
    }

    fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform in `±√(1/fan_in)`.
pub(crate) fn fan_in_uniform<S: Scalar>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut SeededRng,
) -> Result<Tensor<S>> {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| S::lit(rng.symmetric(bound))).collect(),
    )
}

/// Runs a graph-recording closure on a constant input and returns the output value.
pub(crate) fn run_frozen<S: Scalar>(
    x: &Tensor<S>,
    f: impl FnOnce(&mut Graph<S>, NodeId, &mut Binder) -> Result<NodeId>,
) -> Result<Tensor<S>> {
    let mut g = Graph::new();
    let input = g.constant(x.clone());
    let mut binder = Binder::frozen();
    let out = f(&mut g, input, &mut binder)?;
    Ok(g.value(out).clone())
}

/// Elementwise activation on a plain tensor.
pub fn activation<S: Scalar>(kind: Activation, x: &Tensor<S>) -> Result<Tensor<S>> {
    kind.forward(x)
}
