use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{Graph, NodeId};

/// `|ad − fd| / max(1e-8, |ad| + |fd|)`.
pub fn relative_error<S: Scalar>(ad: S, fd: S) -> S {
    (ad - fd).abs() / S::lit(1e-8).max(ad.abs() + fd.abs())
}

fn evaluate<S, F>(f: &F, params: &[Tensor<S>]) -> Result<(Graph<S>, Vec<NodeId>, NodeId)>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.parameter(p.clone())).collect();
    let loss = f(&mut g, &ids)?;
    let value = g.value(loss);
    if value.shape() != [1] {
        return Err(Error::NonScalarLoss(value.shape().to_vec()));
    }
    Ok((g, ids, loss))
}

fn loss_at<S, F>(f: &F, params: &[Tensor<S>]) -> Result<S>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, &[NodeId]) -> Result<NodeId>,
{
    let (g, _, loss) = evaluate(f, params)?;
    g.value(loss).item()
}

/// Compares reverse-mode gradients of the scalar function `f` against central
/// differences `(f(p + eps) − f(p − eps)) / (2·eps)`, one parameter entry at a time,
/// and returns the largest [`relative_error`].
///
/// `f` receives a fresh graph plus the node ids of `params` (recorded as trainable
/// leaves, in order) and returns its loss node.
pub fn finite_difference_check<S, F>(f: F, params: &[Tensor<S>], eps: S) -> Result<S>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, &[NodeId]) -> Result<NodeId>,
{
    if !(eps > S::zero()) || !eps.is_finite() {
        return Err(Error::invalid(format!("finite-difference step {eps} must be positive")));
    }
    let (g, ids, loss) = evaluate(&f, params)?;
    let grads = g.backward(loss)?;
    let two_eps = eps + eps;
    let mut worst = S::zero();
    let mut probe = params.to_vec();
    for (p, id) in ids.iter().enumerate() {
        let ad = grads.get(*id).expect("parameter leaf has a gradient");
        for j in 0..params[p].len() {
            let base = params[p].data()[j];
            let mut shifted = params[p].data().to_vec();
            shifted[j] = base + eps;
            probe[p] = Tensor::new(params[p].shape().to_vec(), shifted.clone())?;
            let up = loss_at(&f, &probe)?;
            shifted[j] = base - eps;
            probe[p] = Tensor::new(params[p].shape().to_vec(), shifted)?;
            let down = loss_at(&f, &probe)?;
            probe[p] = params[p].clone();
            let fd = (up - down) / two_eps;
            worst = worst.max(relative_error(ad.data()[j], fd));
        }
    }
    Ok(worst)
}
