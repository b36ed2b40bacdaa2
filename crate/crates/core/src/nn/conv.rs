use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::ops::Padding;
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{fan_in_uniform, join, run_frozen, Binder, Parameters};

fn bind_bias<S: Scalar>(
    g: &mut Graph<S>,
    bias: &Option<Tensor<S>>,
    outputs: usize,
    binder: &mut Binder,
) -> Result<NodeId> {
    match bias {
        Some(b) => binder.bind(g, b),
        None => Ok(g.constant(Tensor::zeros(&[outputs])?)),
    }
}

/// Convolutions along the time axis.
pub trait TimeConv<S: Scalar> {
    fn window(&self) -> usize;

    fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>>;
}

/// Temporal convolution, `kernel [out, in, w]`, input `[B, in, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d<S: Scalar> {
    pub kernel: Tensor<S>,
    pub bias: Option<Tensor<S>>,
    pub padding: Padding,
}

impl<S: Scalar> Conv1d<S> {
    pub fn new(kernel: Tensor<S>, bias: Tensor<S>, padding: Padding) -> Result<Self> {
        let ks = kernel.shape();
        if ks.len() != 3 || bias.shape() != [ks[0]] {
            return Err(Error::shape(format!(
                "conv1d kernel {ks:?} with bias {:?}",
                bias.shape()
            )));
        }
        Ok(Conv1d {
            kernel,
            bias: Some(bias),
            padding,
        })
    }

    pub fn init(
        in_channels: usize,
        out_channels: usize,
        window: usize,
        padding: Padding,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let fan_in = in_channels * window;
        let kernel = fan_in_uniform(&[out_channels, in_channels, window], fan_in, rng)?;
        let bias = fan_in_uniform(&[out_channels], fan_in, rng)?;
        Self::new(kernel, bias, padding)
    }

    /// Drops the bias, for a layer whose output is instance-normalised straight away
    /// (the normalisation cancels any per-channel constant).
    pub fn without_bias(self) -> Self {
        Conv1d { bias: None, ..self }
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn forward_graph(
        &self,
        g: &mut Graph<S>,
        x: NodeId,
        binder: &mut Binder,
    ) -> Result<NodeId> {
        let k = binder.bind(g, &self.kernel)?;
        let b = bind_bias(g, &self.bias, self.out_channels(), binder)?;
        g.conv1d(x, k, b, self.padding)
    }
}

impl<S: Scalar> TimeConv<S> for Conv1d<S> {
    fn window(&self) -> usize {
        self.kernel.shape()[2]
    }

    fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        run_frozen(x, |g, x, b| self.forward_graph(g, x, b))
    }
}

impl<S: Scalar> Parameters<S> for Conv1d<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        f(join(prefix, "kernel"), &self.kernel);
        if let Some(bias) = &self.bias {
            f(join(prefix, "bias"), bias);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor<S>)) {
        f(&mut self.kernel);
        if let Some(bias) = &mut self.bias {
            f(bias);
        }
    }
}

/// Per-column temporal convolution, `kernel [out, in, w, 1]`, input `[B, in, T, C]`.
/// The kernel spans one variable column, so `C` is preserved.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<S: Scalar> {
    pub kernel: Tensor<S>,
    pub bias: Option<Tensor<S>>,
    pub padding: Padding,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(kernel: Tensor<S>, bias: Tensor<S>, padding: Padding) -> Result<Self> {
        let ks = kernel.shape();
        if ks.len() != 4 || ks[3] != 1 || bias.shape() != [ks[0]] {
            return Err(Error::shape(format!(
                "conv2d kernel {ks:?} (variable-axis width must be 1) with bias {:?}",
                bias.shape()
            )));
        }
        Ok(Conv2d {
            kernel,
            bias: Some(bias),
            padding,
        })
    }

    pub fn init(
        in_maps: usize,
        out_maps: usize,
        window: usize,
        padding: Padding,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let fan_in = in_maps * window;
        let kernel = fan_in_uniform(&[out_maps, in_maps, window, 1], fan_in, rng)?;
        let bias = fan_in_uniform(&[out_maps], fan_in, rng)?;
        Self::new(kernel, bias, padding)
    }

    /// See [`Conv1d::without_bias`].
    pub fn without_bias(self) -> Self {
        Conv2d { bias: None, ..self }
    }

    pub fn in_maps(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn out_maps(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn forward_graph(
        &self,
        g: &mut Graph<S>,
        x: NodeId,
        binder: &mut Binder,
    ) -> Result<NodeId> {
        let k = binder.bind(g, &self.kernel)?;
        let b = bind_bias(g, &self.bias, self.out_maps(), binder)?;
        g.conv2d(x, k, b, self.padding)
    }
}

impl<S: Scalar> TimeConv<S> for Conv2d<S> {
    fn window(&self) -> usize {
        self.kernel.shape()[2]
    }

    fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        run_frozen(x, |g, x, b| self.forward_graph(g, x, b))
    }
}

impl<S: Scalar> Parameters<S> for Conv2d<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        f(join(prefix, "kernel"), &self.kernel);
        if let Some(bias) = &self.bias {
            f(join(prefix, "bias"), bias);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor<S>)) {
        f(&mut self.kernel);
        if let Some(bias) = &mut self.bias {
            f(bias);
        }
    }
}

/// Pointwise (window 1) convolution: a per-position linear map across maps or channels.
pub fn conv_1x1<S: Scalar, L: TimeConv<S>>(layer: &L, x: &Tensor<S>) -> Result<Tensor<S>> {
    if layer.window() != 1 {
        return Err(Error::invalid(format!(
            "1x1 convolution needs window 1, layer has {}",
            layer.window()
        )));
    }
    layer.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type T = Tensor<f64>;

    fn t(shape: &[usize], v: &[f64]) -> T {
        T::from_slice(shape, v).unwrap()
    }

    fn conv1(kernel: &[f64], padding: Padding) -> Conv1d<f64> {
        Conv1d::new(t(&[1, 1, kernel.len()], kernel), t(&[1], &[0.0]), padding).unwrap()
    }

    #[test]
    fn conv1d_hand_examples() {
        let x = t(&[1, 1, 3], &[1.0, 2.0, 3.0]);
        assert_eq!(conv1(&[1.0, 0.0, -1.0], Padding::Valid).forward(&x).unwrap().data(), &[-2.0]);
        assert_eq!(
            conv1(&[1.0, 0.0, -1.0], Padding::SameZero).forward(&x).unwrap().data(),
            &[-2.0, -2.0, 2.0]
        );
        assert_eq!(conv1(&[1.0], Padding::SameZero).forward(&x).unwrap(), x);
    }

    #[test]
    fn conv1d_errors() {
        let layer = conv1(&[1.0, 0.0, -1.0], Padding::Valid);
        assert!(layer.forward(&T::zeros(&[1, 2, 3]).unwrap()).is_err());
        assert!(layer.forward(&T::zeros(&[1, 1, 2]).unwrap()).is_err());
    }

    #[test]
    fn conv2d_hand_examples() {
        let zero = Conv2d::new(
            T::zeros(&[1, 1, 3, 1]).unwrap(),
            t(&[1], &[0.0]),
            Padding::SameZero,
        )
        .unwrap();
        let x = t(&[1, 1, 3, 2], &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert!(zero.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));

        let ident =
            Conv2d::new(t(&[1, 1, 1, 1], &[1.0]), t(&[1], &[0.0]), Padding::SameZero).unwrap();
        assert_eq!(ident.forward(&x).unwrap(), x);

        let diff = Conv2d::new(
            t(&[1, 1, 3, 1], &[1.0, 0.0, -1.0]),
            t(&[1], &[0.0]),
            Padding::Valid,
        )
        .unwrap();
        assert_eq!(diff.forward(&x).unwrap().data(), &[-2.0, -2.0]);

        assert!(diff.forward(&T::zeros(&[1, 2, 3, 2]).unwrap()).is_err());
        assert!(Conv2d::new(T::zeros(&[1, 1, 3, 2]).unwrap(), t(&[1], &[0.0]), Padding::Valid).is_err());
    }

    #[test]
    fn pointwise_examples() {
        let x = t(&[1, 2, 2], &[1.0, 3.0, 5.0, 7.0]);
        let avg = Conv1d::new(t(&[1, 2, 1], &[0.5, 0.5]), t(&[1], &[0.0]), Padding::SameZero).unwrap();
        assert_eq!(conv_1x1(&avg, &x).unwrap().data(), &[3.0, 5.0]);
        let pick = Conv1d::new(t(&[1, 2, 1], &[1.0, 0.0]), t(&[1], &[0.0]), Padding::SameZero).unwrap();
        assert_eq!(conv_1x1(&pick, &x).unwrap().data(), &[1.0, 3.0]);
        let zero = Conv1d::new(t(&[1, 2, 1], &[0.0, 0.0]), t(&[1], &[0.0]), Padding::SameZero).unwrap();
        assert_eq!(conv_1x1(&zero, &x).unwrap().data(), &[0.0, 0.0]);

        let maps = t(&[1, 2, 1, 2], &[2.0, 4.0, 6.0, 8.0]);
        let avg2 =
            Conv2d::new(t(&[1, 2, 1, 1], &[0.5, 0.5]), t(&[1], &[0.0]), Padding::SameZero).unwrap();
        assert_eq!(conv_1x1(&avg2, &maps).unwrap().data(), &[4.0, 6.0]);

        assert!(conv_1x1(&conv1(&[1.0, 1.0, 1.0], Padding::SameZero), &x).is_err());
    }

    proptest! {
        #[test]
        fn conv2d_equals_conv1d_per_column(
            seed in any::<u64>(),
            w_idx in 0usize..3,
            t_len in 5usize..9,
            cols in 1usize..4,
            same in any::<bool>(),
        ) {
            let window = [1, 3, 5][w_idx];
            let padding = if same { Padding::SameZero } else { Padding::Valid };
            let mut rng = SeededRng::new(seed);
            let (in_maps, out_maps, batch) = (2, 3, 2);
            let c2 = Conv2d::<f64>::init(in_maps, out_maps, window, padding, &mut rng).unwrap();
            let c1 = Conv1d::new(
                c2.kernel.reshape(&[out_maps, in_maps, window]).unwrap(),
                c2.bias.clone().unwrap(),
                padding,
            ).unwrap();
            let n = batch * in_maps * t_len * cols;
            let x = T::new(vec![batch, in_maps, t_len, cols], (0..n).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap();
            let y2 = c2.forward(&x).unwrap();
            let out_len = y2.shape()[2];
            for c in 0..cols {
                let col = x.narrow(3, c, 1).unwrap().reshape(&[batch, in_maps, t_len]).unwrap();
                let y1 = c1.forward(&col).unwrap();
                let y2c = y2.narrow(3, c, 1).unwrap().reshape(&[batch, out_maps, out_len]).unwrap();
                prop_assert_eq!(y1.data(), y2c.data());
            }
        }
    }
}
