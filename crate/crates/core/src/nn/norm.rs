use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{join, run_frozen, Binder, Parameters};

pub const DEFAULT_NORM_EPS: f64 = 1e-5;

/// Instance normalisation with a learnable per-channel affine map.
///
/// Statistics are the population mean and variance over the trailing axes of
/// each `(sample, channel)` slice of an input shaped `[B, channels, ...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceNorm<S: Scalar> {
    pub scale: Tensor<S>,
    pub shift: Tensor<S>,
    pub eps: S,
}

impl<S: Scalar> InstanceNorm<S> {
    pub fn new(scale: Tensor<S>, shift: Tensor<S>, eps: S) -> Result<Self> {
        if scale.rank() != 1 || scale.shape() != shift.shape() {
            return Err(Error::shape(format!(
                "instance norm scale {:?}, shift {:?}",
                scale.shape(),
                shift.shape()
            )));
        }
        if !(eps > S::zero()) {
            return Err(Error::invalid(format!("instance norm eps {eps} must be positive")));
        }
        Ok(InstanceNorm { scale, shift, eps })
    }

    /// Unit scale, zero shift, default eps.
    pub fn identity(channels: usize) -> Result<Self> {
        Self::new(
            Tensor::full(&[channels], S::one())?,
            Tensor::zeros(&[channels])?,
            S::lit(DEFAULT_NORM_EPS),
        )
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn forward_graph(
        &self,
        g: &mut Graph<S>,
        x: NodeId,
        binder: &mut Binder,
    ) -> Result<NodeId> {
        let scale = binder.bind(g, &self.scale)?;
        let shift = binder.bind(g, &self.shift)?;
        g.instance_norm(x, scale, shift, self.eps)
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        run_frozen(x, |g, x, b| self.forward_graph(g, x, b))
    }
}

impl<S: Scalar> Parameters<S> for InstanceNorm<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        f(join(prefix, "scale"), &self.scale);
        f(join(prefix, "shift"), &self.shift);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor<S>)) {
        f(&mut self.scale);
        f(&mut self.shift);
    }
}
