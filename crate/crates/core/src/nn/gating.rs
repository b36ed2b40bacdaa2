use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::ops::FlopTally;
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{join, run_frozen, Binder, Dense, InstanceNorm, Parameters};

/// GLU-style block with learned mixing along time.
///
/// For `x [B, T, H]`:
///
/// ```text
/// z      = gelu(proj_in(norm(x)))          [B, T, 2H']
/// u, v   = split z along channels          [B, T, H'] each
/// v'     = time_mix_weight · v + bias      (T×T product over time, per channel)
/// out    = x + proj_out(u ⊙ v')            [B, T, H]
/// ```
///
/// `norm` is instance normalisation of each `(sample, channel)` over time. Projection
/// cost is linear in `H`; time mixing costs `T²` per channel of `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct GatingBlock<S: Scalar> {
    pub norm: InstanceNorm<S>,
    pub proj_in: Dense<S>,
    pub time_mix_weight: Tensor<S>,
    pub time_mix_bias: Tensor<S>,
    pub proj_out: Dense<S>,
}

impl<S: Scalar> GatingBlock<S> {
    pub fn new(
        norm: InstanceNorm<S>,
        proj_in: Dense<S>,
        time_mix_weight: Tensor<S>,
        time_mix_bias: Tensor<S>,
        proj_out: Dense<S>,
    ) -> Result<Self> {
        let width = norm.channels();
        let expanded = proj_in.out_features();
        if expanded % 2 != 0 {
            return Err(Error::shape(format!(
                "gating projection width {expanded} must be even"
            )));
        }
        let steps = time_mix_bias.len();
        if proj_in.in_features() != width
            || proj_out.in_features() != expanded / 2
            || proj_out.out_features() != width
            || time_mix_weight.shape() != [steps, steps]
            || time_mix_bias.rank() != 1
        {
            return Err(Error::shape(format!(
                "gating block: norm {width}, proj_in {:?}, time mix {:?}/{:?}, proj_out {:?}",
                proj_in.weight.shape(),
                time_mix_weight.shape(),
                time_mix_bias.shape(),
                proj_out.weight.shape()
            )));
        }
        Ok(GatingBlock {
            norm,
            proj_in,
            time_mix_weight,
            time_mix_bias,
            proj_out,
        })
    }

    /// Fresh block for `steps` time steps, trunk width `width` and half-width `hidden`.
    /// Time mixing starts at zero weight and unit bias, so `v' = 1` and the block is a
    /// small residual perturbation of its input.
    pub fn init(steps: usize, width: usize, hidden: usize, rng: &mut SeededRng) -> Result<Self> {
        Self::new(
            InstanceNorm::identity(width)?,
            Dense::init(width, 2 * hidden, rng)?,
            Tensor::zeros(&[steps, steps])?,
            Tensor::full(&[steps], S::one())?,
            Dense::init(hidden, width, rng)?,
        )
    }

    pub fn steps(&self) -> usize {
        self.time_mix_bias.len()
    }

    pub fn width(&self) -> usize {
        self.norm.channels()
    }

    pub fn hidden(&self) -> usize {
        self.proj_out.in_features()
    }

    pub fn forward_graph(
        &self,
        g: &mut Graph<S>,
        x: NodeId,
        binder: &mut Binder,
    ) -> Result<NodeId> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 3 || shape[1] != self.steps() || shape[2] != self.width() {
            return Err(Error::shape(format!(
                "gating block expects [B, {}, {}], got {shape:?}",
                self.steps(),
                self.width()
            )));
        }
        let channels_first = g.permute(x, &[0, 2, 1])?;
        let normed = self.norm.forward_graph(g, channels_first, binder)?;
        let normed = g.permute(normed, &[0, 2, 1])?;
        let expanded = self.proj_in.forward_graph(g, normed, binder)?;
        let activated = g.gelu(expanded)?;
        let (u, v) = g.split_half(2, activated)?;
        let w = binder.bind(g, &self.time_mix_weight)?;
        let b = binder.bind(g, &self.time_mix_bias)?;
        let mixed = g.time_mix(v, w, b)?;
        let gated = g.mul(u, mixed)?;
        let projected = self.proj_out.forward_graph(g, gated, binder)?;
        g.add(x, projected)
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        run_frozen(x, |g, x, b| self.forward_graph(g, x, b))
    }

    /// Work counted while running the block on a zero batch of the given size.
    pub fn flop_profile(&self, batch: usize) -> Result<FlopTally> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[batch, self.steps(), self.width()])?);
        self.forward_graph(&mut g, x, &mut Binder::frozen())?;
        Ok(g.flops())
    }
}

impl<S: Scalar> Parameters<S> for GatingBlock<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        self.norm.visit(&join(prefix, "norm"), f);
        self.proj_in.visit(&join(prefix, "proj_in"), f);
        f(join(prefix, "time_mix.weight"), &self.time_mix_weight);
        f(join(prefix, "time_mix.bias"), &self.time_mix_bias);
        self.proj_out.visit(&join(prefix, "proj_out"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor<S>)) {
        self.norm.visit_mut(f);
        self.proj_in.visit_mut(f);
        f(&mut self.time_mix_weight);
        f(&mut self.time_mix_bias);
        self.proj_out.visit_mut(f);
    }
}

/// `N` gating blocks applied in sequence, followed by an elementwise tanh.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct GatingModule<S: Scalar> {
    pub blocks: Vec<GatingBlock<S>>,
}

impl<S: Scalar> GatingModule<S> {
    pub fn new(blocks: Vec<GatingBlock<S>>) -> Result<Self> {
        if let Some(first) = blocks.first() {
            let compatible = blocks
                .iter()
                .all(|b| b.steps() == first.steps() && b.width() == first.width());
            if !compatible {
                return Err(Error::shape("gating blocks disagree on [T, H]"));
            }
        }
        Ok(GatingModule { blocks })
    }

    /// Returns the per-block outputs and the final tanh output.
    pub fn forward_graph_traced(
        &self,
        g: &mut Graph<S>,
        x: NodeId,
        binder: &mut Binder,
    ) -> Result<(Vec<NodeId>, NodeId)> {
        let mut h = x;
        let mut trace = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            h = block.forward_graph(g, h, binder)?;
            trace.push(h);
        }
        Ok((trace, g.tanh(h)?))
    }

    pub fn forward_graph(
        &self,
        g: &mut Graph<S>,
        x: NodeId,
        binder: &mut Binder,
    ) -> Result<NodeId> {
        Ok(self.forward_graph_traced(g, x, binder)?.1)
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        run_frozen(x, |g, x, b| self.forward_graph(g, x, b))
    }
}

impl<S: Scalar> Parameters<S> for GatingModule<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        for (i, block) in self.blocks.iter().enumerate() {
            block.visit(&join(prefix, &format!("block{i}")), f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor<S>)) {
        for block in &mut self.blocks {
            block.visit_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::gelu;
    use proptest::prelude::*;

    type T = Tensor<f64>;

    fn random(shape: &[usize], rng: &mut SeededRng) -> T {
        let n = shape.iter().product();
        T::new(shape.to_vec(), (0..n).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_out_projection_is_pure_residual() {
        let mut rng = SeededRng::new(1);
        let mut block = GatingBlock::<f64>::init(5, 4, 4, &mut rng).unwrap();
        block.proj_out = Dense::new(T::zeros(&[4, 4]).unwrap(), T::zeros(&[4]).unwrap()).unwrap();
        let x = random(&[2, 5, 4], &mut rng);
        assert_eq!(block.forward(&x).unwrap(), x);
    }

    #[test]
    fn init_time_mix_passes_u_through() {
        // Zero mixing weight and unit bias make v' = 1, so the gate equals u and the
        // block is x + proj_out(gelu first half of proj_in(norm(x))).
        let mut rng = SeededRng::new(2);
        let block = GatingBlock::<f64>::init(4, 3, 2, &mut rng).unwrap();
        let x = random(&[1, 4, 3], &mut rng);
        let out = block.forward(&x).unwrap();

        let normed = block
            .norm
            .forward(&x.permute(&[0, 2, 1]).unwrap())
            .unwrap()
            .permute(&[0, 2, 1])
            .unwrap();
        let u = block
            .proj_in
            .forward(&normed)
            .unwrap()
            .map(gelu)
            .unwrap()
            .split_half(2)
            .unwrap()
            .0;
        let expected = x.add(&block.proj_out.forward(&u).unwrap()).unwrap();
        assert!(out.max_abs_diff(&expected).unwrap() < 1e-14);
    }

    #[test]
    fn gate_is_elementwise_product() {
        let u = T::from_slice(&[1, 1, 2], &[1.0, 2.0]).unwrap();
        let v = T::from_slice(&[1, 1, 2], &[0.5, -1.0]).unwrap();
        assert_eq!(u.mul(&v).unwrap().data(), &[0.5, -2.0]);
    }

    #[test]
    fn rejects_odd_projection_and_mismatched_time() {
        let mut rng = SeededRng::new(3);
        let odd = GatingBlock::new(
            InstanceNorm::identity(2).unwrap(),
            Dense::<f64>::init(2, 3, &mut rng).unwrap(),
            T::zeros(&[4, 4]).unwrap(),
            T::full(&[4], 1.0).unwrap(),
            Dense::init(1, 2, &mut rng).unwrap(),
        );
        assert!(odd.is_err());
        let block = GatingBlock::<f64>::init(4, 2, 2, &mut rng).unwrap();
        assert!(block.forward(&T::zeros(&[1, 5, 2]).unwrap()).is_err());
    }

    #[test]
    fn empty_module_is_tanh() {
        let x = T::from_slice(&[1, 2, 1], &[0.3, -2.0]).unwrap();
        let y = GatingModule::default().forward(&x).unwrap();
        assert_eq!(y.data(), &[0.3f64.tanh(), (-2.0f64).tanh()]);
    }

    #[test]
    fn single_block_with_zero_output_is_tanh() {
        let mut rng = SeededRng::new(4);
        let mut block = GatingBlock::<f64>::init(3, 2, 2, &mut rng).unwrap();
        block.proj_out = Dense::new(T::zeros(&[2, 2]).unwrap(), T::zeros(&[2]).unwrap()).unwrap();
        let x = random(&[2, 3, 2], &mut rng);
        let y = GatingModule::new(vec![block]).unwrap().forward(&x).unwrap();
        assert_eq!(y, x.map(f64::tanh).unwrap());
    }

    #[test]
    fn flop_scaling() {
        let mut rng = SeededRng::new(5);
        let base = GatingBlock::<f64>::init(8, 6, 4, &mut rng).unwrap().flop_profile(2).unwrap();
        let long = GatingBlock::<f64>::init(16, 6, 4, &mut rng).unwrap().flop_profile(2).unwrap();
        let wide = GatingBlock::<f64>::init(8, 12, 4, &mut rng).unwrap().flop_profile(2).unwrap();
        let more_mixed = GatingBlock::<f64>::init(8, 6, 8, &mut rng).unwrap().flop_profile(2).unwrap();
        assert_eq!(long.time_mixing, 4 * base.time_mixing);
        assert_eq!(long.projection, 2 * base.projection);
        assert_eq!(wide.projection, 2 * base.projection);
        assert_eq!(wide.time_mixing, base.time_mixing);
        assert_eq!(more_mixed.time_mixing, 2 * base.time_mixing);
    }

    proptest! {
        #[test]
        fn module_output_is_bounded(seed in any::<u64>(), scale in 0.1f64..1e3, blocks in 0usize..3) {
            let mut rng = SeededRng::new(seed);
            let blocks = (0..blocks)
                .map(|_| GatingBlock::<f64>::init(4, 3, 3, &mut rng).unwrap())
                .collect();
            let module = GatingModule::new(blocks).unwrap();
            let x = random(&[2, 4, 3], &mut rng).map(|v| v * scale).unwrap();
            let y = module.forward(&x).unwrap();
            prop_assert!(y.data().iter().all(|v| v.abs() <= 1.0));
        }
    }
}
