use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{fan_in_uniform, join, run_frozen, Binder, Parameters};

/// Affine projection over the last axis, `weight [out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> Dense<S> {
    pub fn new(weight: Tensor<S>, bias: Tensor<S>) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape(format!(
                "dense weight {:?} with bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Dense { weight, bias })
    }

    pub fn init(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Result<Self> {
        let weight = fan_in_uniform(&[fan_out, fan_in], fan_in, rng)?;
        let bias = fan_in_uniform(&[fan_out], fan_in, rng)?;
        Self::new(weight, bias)
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward_graph(
        &self,
        g: &mut Graph<S>,
        x: NodeId,
        binder: &mut Binder,
    ) -> Result<NodeId> {
        let w = binder.bind(g, &self.weight)?;
        let b = binder.bind(g, &self.bias)?;
        g.dense(x, w, b)
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        run_frozen(x, |g, x, b| self.forward_graph(g, x, b))
    }
}

impl<S: Scalar> Parameters<S> for Dense<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor<S>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
