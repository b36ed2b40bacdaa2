//! Forward kernels and their adjoints for the non-elementwise primitives.
//!
//! Every kernel here is a pure function of its inputs. The autodiff graph calls
//! the forward kernel when an operation is recorded and the matching backward
//! kernel during the reverse sweep.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Padding {
    /// Zero padding of `w / 2` steps on the left and `w - 1 - w / 2` on the right; length preserved.
    #[default]
    SameZero,
    /// No padding; output length `T - w + 1`.
    Valid,
}

impl Padding {
    fn left(self, window: usize) -> usize {
        match self {
            Padding::SameZero => window / 2,
            Padding::Valid => 0,
        }
    }

    fn out_len(self, len: usize, window: usize) -> Result<usize> {
        match self {
            Padding::SameZero => Ok(len),
            Padding::Valid if len >= window => Ok(len - window + 1),
            Padding::Valid => Err(Error::shape(format!(
                "sequence length {len} shorter than window {window}"
            ))),
        }
    }
}

/// Multiply–accumulate work performed by matrix-product style kernels, in FLOPs (2 per MAC).
///
/// Bias additions and elementwise work are not counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopTally {
    /// Dense channel projections.
    pub projection: u64,
    /// Learned T×T mixing along the time axis.
    pub time_mixing: u64,
    pub convolution: u64,
    pub matmul: u64,
}

impl FlopTally {
    pub fn total(&self) -> u64 {
        self.projection + self.time_mixing + self.convolution + self.matmul
    }
}

struct ConvGeom {
    batch: usize,
    in_ch: usize,
    len: usize,
    cols: usize,
    out_ch: usize,
    window: usize,
    out_len: usize,
    left: usize,
}

/// Shared convolution over the time axis of a `[B, Cin, T, cols]` layout.
/// 1D convolution is the `cols = 1` case, so both paths accumulate in the same order.
fn conv_time_forward<S: Scalar>(
    x: &[S],
    kernel: &[S],
    bias: &[S],
    g: &ConvGeom,
) -> Vec<S> {
    let mut out = vec![S::zero(); g.batch * g.out_ch * g.out_len * g.cols];
    for b in 0..g.batch {
        for o in 0..g.out_ch {
            for t in 0..g.out_len {
                for c in 0..g.cols {
                    let mut acc = S::zero();
                    for i in 0..g.in_ch {
                        for k in 0..g.window {
                            let src = t + k;
                            if src < g.left || src - g.left >= g.len {
                                continue;
                            }
                            let xv = x[((b * g.in_ch + i) * g.len + src - g.left) * g.cols + c];
                            acc = acc + xv * kernel[(o * g.in_ch + i) * g.window + k];
                        }
                    }
                    out[((b * g.out_ch + o) * g.out_len + t) * g.cols + c] = acc + bias[o];
                }
            }
        }
    }
    out
}

fn conv_time_backward<S: Scalar>(
    x: &[S],
    kernel: &[S],
    dout: &[S],
    g: &ConvGeom,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let mut dx = vec![S::zero(); x.len()];
    let mut dk = vec![S::zero(); kernel.len()];
    let mut db = vec![S::zero(); g.out_ch];
    for b in 0..g.batch {
        for o in 0..g.out_ch {
            for t in 0..g.out_len {
                for c in 0..g.cols {
                    let d = dout[((b * g.out_ch + o) * g.out_len + t) * g.cols + c];
                    db[o] = db[o] + d;
                    for i in 0..g.in_ch {
                        for k in 0..g.window {
                            let src = t + k;
                            if src < g.left || src - g.left >= g.len {
                                continue;
                            }
                            let xi = ((b * g.in_ch + i) * g.len + src - g.left) * g.cols + c;
                            let ki = (o * g.in_ch + i) * g.window + k;
                            dx[xi] = dx[xi] + d * kernel[ki];
                            dk[ki] = dk[ki] + d * x[xi];
                        }
                    }
                }
            }
        }
    }
    (dx, dk, db)
}

fn conv1d_geom<S: Scalar>(
    x: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: &Tensor<S>,
    padding: Padding,
) -> Result<ConvGeom> {
    let (xs, ks) = (x.shape(), kernel.shape());
    if xs.len() != 3 || ks.len() != 3 || xs[1] != ks[1] || bias.shape() != [ks[0]] {
        return Err(Error::shape(format!(
            "conv1d input {xs:?}, kernel {ks:?}, bias {:?}",
            bias.shape()
        )));
    }
    Ok(ConvGeom {
        batch: xs[0],
        in_ch: xs[1],
        len: xs[2],
        cols: 1,
        out_ch: ks[0],
        window: ks[2],
        out_len: padding.out_len(xs[2], ks[2])?,
        left: padding.left(ks[2]),
    })
}

fn conv2d_geom<S: Scalar>(
    x: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: &Tensor<S>,
    padding: Padding,
) -> Result<ConvGeom> {
    let (xs, ks) = (x.shape(), kernel.shape());
    if xs.len() != 4 || ks.len() != 4 || ks[3] != 1 || xs[1] != ks[1] || bias.shape() != [ks[0]]
    {
        return Err(Error::shape(format!(
            "conv2d input {xs:?}, kernel {ks:?}, bias {:?}",
            bias.shape()
        )));
    }
    Ok(ConvGeom {
        batch: xs[0],
        in_ch: xs[1],
        len: xs[2],
        cols: xs[3],
        out_ch: ks[0],
        window: ks[2],
        out_len: padding.out_len(xs[2], ks[2])?,
        left: padding.left(ks[2]),
    })
}

fn conv_flops(g: &ConvGeom) -> u64 {
    2 * (g.batch * g.out_ch * g.out_len * g.cols * g.in_ch * g.window) as u64
}

/// Cross-correlation over time: `x [B, Cin, T]`, `kernel [Cout, Cin, w]`, `bias [Cout]`.
pub fn conv1d<S: Scalar>(
    x: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: &Tensor<S>,
    padding: Padding,
) -> Result<(Tensor<S>, u64)> {
    let g = conv1d_geom(x, kernel, bias, padding)?;
    let out = conv_time_forward(x.data(), kernel.data(), bias.data(), &g);
    Ok((
        Tensor::new(vec![g.batch, g.out_ch, g.out_len], out)?,
        conv_flops(&g),
    ))
}

pub fn conv1d_backward<S: Scalar>(
    x: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: &Tensor<S>,
    padding: Padding,
    dout: &Tensor<S>,
) -> Result<[Tensor<S>; 3]> {
    let g = conv1d_geom(x, kernel, bias, padding)?;
    let (dx, dk, db) = conv_time_backward(x.data(), kernel.data(), dout.data(), &g);
    Ok([
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(kernel.shape().to_vec(), dk)?,
        Tensor::new(bias.shape().to_vec(), db)?,
    ])
}

/// Convolution along the time axis applied independently to every variable column:
/// `x [B, Cin, T, C]`, `kernel [Cout, Cin, w, 1]`, `bias [Cout]`.
pub fn conv2d<S: Scalar>(
    x: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: &Tensor<S>,
    padding: Padding,
) -> Result<(Tensor<S>, u64)> {
    let g = conv2d_geom(x, kernel, bias, padding)?;
    let out = conv_time_forward(x.data(), kernel.data(), bias.data(), &g);
    Ok((
        Tensor::new(vec![g.batch, g.out_ch, g.out_len, g.cols], out)?,
        conv_flops(&g),
    ))
}

pub fn conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: &Tensor<S>,
    padding: Padding,
    dout: &Tensor<S>,
) -> Result<[Tensor<S>; 3]> {
    let g = conv2d_geom(x, kernel, bias, padding)?;
    let (dx, dk, db) = conv_time_backward(x.data(), kernel.data(), dout.data(), &g);
    Ok([
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(kernel.shape().to_vec(), dk)?,
        Tensor::new(bias.shape().to_vec(), db)?,
    ])
}

/// Per-(sample, channel) statistics saved by the instance-norm forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats<S> {
    pub mean: Vec<S>,
    pub inv_std: Vec<S>,
}

fn instance_norm_dims<S: Scalar>(
    x: &Tensor<S>,
    scale: &Tensor<S>,
    shift: &Tensor<S>,
) -> Result<(usize, usize, usize)> {
    let xs = x.shape();
    if xs.len() < 3 || scale.shape() != [xs[1]] || shift.shape() != [xs[1]] {
        return Err(Error::shape(format!(
            "instance norm input {xs:?}, scale {:?}, shift {:?}",
            scale.shape(),
            shift.shape()
        )));
    }
    Ok((xs[0], xs[1], xs[2..].iter().product()))
}

/// `y = scale * (x - mean) / sqrt(var + eps) + shift` with population statistics over
/// the trailing (spatial) axes of each `(sample, channel)` slice of `x [B, C, ...]`.
pub fn instance_norm<S: Scalar>(
    x: &Tensor<S>,
    scale: &Tensor<S>,
    shift: &Tensor<S>,
    eps: S,
) -> Result<(Tensor<S>, NormStats<S>)> {
    let (batch, ch, n) = instance_norm_dims(x, scale, shift)?;
    let count = S::from_count(n);
    let xd = x.data();
    let mut out = vec![S::zero(); xd.len()];
    let mut stats = NormStats {
        mean: Vec::with_capacity(batch * ch),
        inv_std: Vec::with_capacity(batch * ch),
    };
    for b in 0..batch {
        for c in 0..ch {
            let slice = &xd[(b * ch + c) * n..(b * ch + c + 1) * n];
            let mean = slice.iter().fold(S::zero(), |a, &v| a + v) / count;
            let var = slice
                .iter()
                .fold(S::zero(), |a, &v| a + (v - mean) * (v - mean))
                / count;
            let inv_std = (var + eps).sqrt().recip();
            let (g, h) = (scale.data()[c], shift.data()[c]);
            for (j, &v) in slice.iter().enumerate() {
                out[(b * ch + c) * n + j] = g * ((v - mean) * inv_std) + h;
            }
            stats.mean.push(mean);
            stats.inv_std.push(inv_std);
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, stats))
}

pub fn instance_norm_backward<S: Scalar>(
    x: &Tensor<S>,
    scale: &Tensor<S>,
    shift: &Tensor<S>,
    stats: &NormStats<S>,
    dout: &Tensor<S>,
) -> Result<[Tensor<S>; 3]> {
    let (batch, ch, n) = instance_norm_dims(x, scale, shift)?;
    let count = S::from_count(n);
    let (xd, dy) = (x.data(), dout.data());
    let mut dx = vec![S::zero(); xd.len()];
    let mut dscale = vec![S::zero(); ch];
    let mut dshift = vec![S::zero(); ch];
    for b in 0..batch {
        for c in 0..ch {
            let base = (b * ch + c) * n;
            let (mean, inv_std) = (stats.mean[b * ch + c], stats.inv_std[b * ch + c]);
            let g = scale.data()[c];
            let mut sum_d = S::zero();
            let mut sum_dx = S::zero();
            for j in 0..n {
                let xhat = (xd[base + j] - mean) * inv_std;
                let d = dy[base + j];
                dscale[c] = dscale[c] + d * xhat;
                dshift[c] = dshift[c] + d;
                let dxhat = d * g;
                sum_d = sum_d + dxhat;
                sum_dx = sum_dx + dxhat * xhat;
            }
            for j in 0..n {
                let xhat = (xd[base + j] - mean) * inv_std;
                let dxhat = dy[base + j] * g;
                dx[base + j] = inv_std / count * (count * dxhat - sum_d - xhat * sum_dx);
            }
        }
    }
    Ok([
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(vec![ch], dscale)?,
        Tensor::new(vec![ch], dshift)?,
    ])
}

fn dense_dims<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<(usize, usize, usize)> {
    let ws = weight.shape();
    let xs = x.shape();
    if ws.len() != 2 || xs[xs.len() - 1] != ws[1] || bias.shape() != [ws[0]] {
        return Err(Error::shape(format!(
            "dense input {xs:?}, weight {ws:?}, bias {:?}",
            bias.shape()
        )));
    }
    Ok((x.len() / ws[1], ws[1], ws[0]))
}

/// Affine map over the last axis: `x [..., in]`, `weight [out, in]`, `bias [out]` → `[..., out]`.
pub fn dense<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<(Tensor<S>, u64)> {
    let (rows, fan_in, fan_out) = dense_dims(x, weight, bias)?;
    let (xd, wd, bd) = (x.data(), weight.data(), bias.data());
    let mut out = Vec::with_capacity(rows * fan_out);
    for r in 0..rows {
        let xr = &xd[r * fan_in..(r + 1) * fan_in];
        for o in 0..fan_out {
            let wr = &wd[o * fan_in..(o + 1) * fan_in];
            let acc = xr.iter().zip(wr).fold(S::zero(), |a, (&p, &q)| a + p * q);
            out.push(acc + bd[o]);
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = fan_out;
    Ok((
        Tensor::new(shape, out)?,
        2 * (rows * fan_in * fan_out) as u64,
    ))
}

pub fn dense_backward<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    dout: &Tensor<S>,
) -> Result<[Tensor<S>; 3]> {
    let (rows, fan_in, fan_out) = dense_dims(x, weight, bias)?;
    let (xd, wd, dy) = (x.data(), weight.data(), dout.data());
    let mut dx = vec![S::zero(); xd.len()];
    let mut dw = vec![S::zero(); wd.len()];
    let mut db = vec![S::zero(); fan_out];
    for r in 0..rows {
        for o in 0..fan_out {
            let d = dy[r * fan_out + o];
            db[o] = db[o] + d;
            for i in 0..fan_in {
                dx[r * fan_in + i] = dx[r * fan_in + i] + d * wd[o * fan_in + i];
                dw[o * fan_in + i] = dw[o * fan_in + i] + d * xd[r * fan_in + i];
            }
        }
    }
    Ok([
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(weight.shape().to_vec(), dw)?,
        Tensor::new(bias.shape().to_vec(), db)?,
    ])
}

fn time_mix_dims<S: Scalar>(
    v: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<(usize, usize, usize)> {
    let vs = v.shape();
    if vs.len() != 3 || weight.shape() != [vs[1], vs[1]] || bias.shape() != [vs[1]] {
        return Err(Error::shape(format!(
            "time mix input {vs:?}, weight {:?}, bias {:?}",
            weight.shape(),
            bias.shape()
        )));
    }
    Ok((vs[0], vs[1], vs[2]))
}

/// Learned mixing along time, shared by every channel:
/// `out[b, t, h] = Σ_s weight[t, s] · v[b, s, h] + bias[t]` for `v [B, T, H]`, `weight [T, T]`.
pub fn time_mix<S: Scalar>(
    v: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<(Tensor<S>, u64)> {
    let (batch, len, ch) = time_mix_dims(v, weight, bias)?;
    let (vd, wd, bd) = (v.data(), weight.data(), bias.data());
    let mut out = vec![S::zero(); vd.len()];
    for b in 0..batch {
        for t in 0..len {
            for h in 0..ch {
                let mut acc = S::zero();
                for s in 0..len {
                    acc = acc + wd[t * len + s] * vd[(b * len + s) * ch + h];
                }
                out[(b * len + t) * ch + h] = acc + bd[t];
            }
        }
    }
    Ok((
        Tensor::new(v.shape().to_vec(), out)?,
        2 * (batch * ch * len * len) as u64,
    ))
}

pub fn time_mix_backward<S: Scalar>(
    v: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    dout: &Tensor<S>,
) -> Result<[Tensor<S>; 3]> {
    let (batch, len, ch) = time_mix_dims(v, weight, bias)?;
    let (vd, wd, dy) = (v.data(), weight.data(), dout.data());
    let mut dv = vec![S::zero(); vd.len()];
    let mut dw = vec![S::zero(); wd.len()];
    let mut db = vec![S::zero(); len];
    for b in 0..batch {
        for t in 0..len {
            for h in 0..ch {
                let d = dy[(b * len + t) * ch + h];
                db[t] = db[t] + d;
                for s in 0..len {
                    let vi = (b * len + s) * ch + h;
                    dv[vi] = dv[vi] + wd[t * len + s] * d;
                    dw[t * len + s] = dw[t * len + s] + d * vd[vi];
                }
            }
        }
    }
    Ok([
        Tensor::new(v.shape().to_vec(), dv)?,
        Tensor::new(weight.shape().to_vec(), dw)?,
        Tensor::new(bias.shape().to_vec(), db)?,
    ])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
    Tanh,
    Sigmoid,
}

const GELU_COEF: f64 = 0.044715;

fn sqrt_2_over_pi<S: Scalar>() -> S {
    S::lit((2.0 / std::f64::consts::PI).sqrt())
}

pub fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        (S::one() + (-z).exp()).recip()
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// GeLU, tanh approximation: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
pub fn gelu<S: Scalar>(x: S) -> S {
    let half = S::lit(0.5);
    let inner = sqrt_2_over_pi::<S>() * (x + S::lit(GELU_COEF) * x * x * x);
    half * x * (S::one() + inner.tanh())
}

pub fn gelu_derivative<S: Scalar>(x: S) -> S {
    // Past this magnitude the curve equals its asymptotes and x³ risks overflow.
    if x.abs() > S::lit(1e6) {
        return if x > S::zero() { S::one() } else { S::zero() };
    }
    let half = S::lit(0.5);
    let c = sqrt_2_over_pi::<S>();
    let a = S::lit(GELU_COEF);
    let th = (c * (x + a * x * x * x)).tanh();
    let sech2 = S::one() - th * th;
    half * (S::one() + th) + half * x * sech2 * c * (S::one() + S::lit(3.0) * a * x * x)
}

impl Activation {
    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Relu => x.max(S::zero()),
            Activation::Gelu => gelu(x),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative given the input `x` and the output `y = apply(x)`.
    /// ReLU takes the subgradient 0 at exactly 0.
    pub fn derivative<S: Scalar>(self, x: S, y: S) -> S {
        match self {
            Activation::Relu => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Gelu => gelu_derivative(x),
            Activation::Tanh => S::one() - y * y,
            Activation::Sigmoid => y * (S::one() - y),
        }
    }

    pub fn forward<S: Scalar>(self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.map(|v| self.apply(v))
    }
}

/// Mean binary cross-entropy on logits in the overflow-safe form
/// `max(z, 0) − z·y + ln(1 + exp(−|z|))`.
pub fn bce_with_logits<S: Scalar>(logits: &Tensor<S>, labels: &[S]) -> Result<S> {
    if logits.rank() != 1 || logits.len() != labels.len() {
        return Err(Error::shape(format!(
            "logits {:?} vs {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let total = logits
        .data()
        .iter()
        .zip(labels)
        .fold(S::zero(), |acc, (&z, &y)| {
            acc + z.max(S::zero()) - z * y + (-z.abs()).exp().ln_1p()
        });
    Ok(total / S::from_count(labels.len()))
}

/// `bce_with_logits(z) − bce_with_logits(z₀)` for fixed reference logits `z₀`, evaluated
/// without forming either term: per sample `ln(1 + expm1(z − z₀)·σ(z₀)) − (z − z₀)·y`.
/// Its gradient is that of the plain loss, but near `z₀` it keeps full relative precision,
/// which finite-difference checks need.
pub fn bce_with_logits_excess<S: Scalar>(logits: &Tensor<S>, labels: &[S], reference: &Tensor<S>) -> Result<S> {
    if logits.rank() != 1 || logits.len() != labels.len() || reference.shape() != logits.shape() {
        return Err(Error::shape(format!(
            "logits {:?} vs {} labels and reference {:?}",
            logits.shape(),
            labels.len(),
            reference.shape()
        )));
    }
    let mut total = S::zero();
    for ((&z, &y), &z0) in logits.data().iter().zip(labels).zip(reference.data()) {
        let d = z - z0;
        total = total + (d.exp_m1() * sigmoid(z0)).ln_1p() - d * y;
    }
    let mean = total / S::from_count(labels.len());
    if !mean.is_finite() {
        return Err(Error::NonFinite("cross-entropy excess overflowed".into()));
    }
    Ok(mean)
}

pub fn bce_with_logits_backward<S: Scalar>(logits: &Tensor<S>, labels: &[S], dout: S) -> Result<Tensor<S>> {
    let n = S::from_count(labels.len());
    Tensor::new(
        logits.shape().to_vec(),
        logits
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| dout * (sigmoid(z) - y) / n)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    type T = Tensor<f64>;

    fn t(shape: &[usize], v: &[f64]) -> T {
        T::from_slice(shape, v).unwrap()
    }

    #[test]
    fn conv1d_valid_and_same() {
        let x = t(&[1, 1, 3], &[1.0, 2.0, 3.0]);
        let k = t(&[1, 1, 3], &[1.0, 0.0, -1.0]);
        let b = t(&[1], &[0.0]);
        let (y, _) = conv1d(&x, &k, &b, Padding::Valid).unwrap();
        assert_eq!(y.data(), &[-2.0]);
        let (y, _) = conv1d(&x, &k, &b, Padding::SameZero).unwrap();
        assert_eq!(y.data(), &[-2.0, -2.0, 2.0]);
    }

    #[test]
    fn conv1d_short_sequence_valid_is_error() {
        let x = t(&[1, 1, 2], &[1.0, 2.0]);
        let k = t(&[1, 1, 3], &[1.0, 0.0, -1.0]);
        assert!(conv1d(&x, &k, &t(&[1], &[0.0]), Padding::Valid).is_err());
    }

    #[test]
    fn conv2d_per_column() {
        // T = 3, C = 2; column 0 is [1,2,3], column 1 is [4,5,6].
        let x = t(&[1, 1, 3, 2], &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let k = t(&[1, 1, 3, 1], &[1.0, 0.0, -1.0]);
        let (y, _) = conv2d(&x, &k, &t(&[1], &[0.0]), Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert_eq!(y.data(), &[-2.0, -2.0]);
    }

    #[test]
    fn conv2d_rejects_wide_kernel() {
        let x = T::zeros(&[1, 1, 3, 2]).unwrap();
        let k = T::zeros(&[1, 1, 3, 2]).unwrap();
        assert!(conv2d(&x, &k, &t(&[1], &[0.0]), Padding::Valid).is_err());
    }

    #[test]
    fn instance_norm_hand_values() {
        let x = t(&[1, 1, 3], &[1.0, 2.0, 3.0]);
        let (y, stats) = instance_norm(&x, &t(&[1], &[1.0]), &t(&[1], &[0.0]), 1e-5).unwrap();
        let expected = [-1.224745, 0.0, 1.224745];
        for (a, b) in y.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
        assert_eq!(stats.mean, vec![2.0]);

        let flat = t(&[1, 1, 3], &[5.0, 5.0, 5.0]);
        let (y, _) = instance_norm(&flat, &t(&[1], &[1.0]), &t(&[1], &[0.0]), 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);

        let (y, _) = instance_norm(&x, &t(&[1], &[0.0]), &t(&[1], &[0.7]), 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn activation_points() {
        let r = Activation::Relu.forward(&t(&[3], &[-1.0, 0.0, 2.0])).unwrap();
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(gelu(0.0f64), 0.0);
        assert_eq!(Activation::Tanh.apply(0.0f64), 0.0);
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((gelu(1.0f64) - 0.841192).abs() < 1e-6);
        assert_eq!(Activation::Relu.derivative(0.0f64, 0.0), 0.0);
        assert!((gelu_derivative(1e9f64) - 1.0).abs() < 1e-12);
        assert_eq!(gelu_derivative(-1e9f64), 0.0);
    }

    #[test]
    fn bce_excess_matches_difference() {
        let z0 = t(&[3], &[-1.5, 0.2, 2.0]);
        let z = t(&[3], &[-1.0, 0.7, 1.0]);
        let y = [1.0, 0.0, 1.0];
        let direct = bce_with_logits(&z, &y).unwrap() - bce_with_logits(&z0, &y).unwrap();
        let excess = bce_with_logits_excess(&z, &y, &z0).unwrap();
        assert!((direct - excess).abs() < 1e-15);
        assert_eq!(bce_with_logits_excess(&z0, &y, &z0).unwrap(), 0.0);
        assert!(bce_with_logits_excess(&z, &y, &t(&[2], &[0.0, 0.0])).is_err());
    }

    #[test]
    fn bce_hand_values() {
        let l = bce_with_logits(&t(&[1], &[0.0]), &[1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let l = bce_with_logits(&t(&[1], &[50.0]), &[1.0]).unwrap();
        assert!(l < 1e-20);
        let l = bce_with_logits(&t(&[1], &[-50.0]), &[1.0]).unwrap();
        assert!((l - 50.0).abs() < 1e-12);
    }

    #[test]
    fn bce_matches_naive_form() {
        for i in 0..=400 {
            let z = -20.0 + 0.1 * i as f64;
            for y in [0.0, 1.0] {
                let safe = bce_with_logits(&t(&[1], &[z]), &[y]).unwrap();
                let naive = if y == 1.0 {
                    (1.0 + (-z).exp()).ln()
                } else {
                    (1.0 + z.exp()).ln()
                };
                assert!((safe - naive).abs() < 1e-12, "z={z} y={y}: {safe} vs {naive}");
            }
        }
    }

    #[test]
    fn time_mix_identity_weight() {
        let v = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let (y, flops) = time_mix(&v, &w, &t(&[2], &[0.0, 0.0])).unwrap();
        assert_eq!(y, v);
        assert_eq!(flops, 2 * 2 * 2 * 2);
    }

    #[test]
    fn dense_last_axis() {
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[1, 2], &[0.5, 0.5]);
        let (y, _) = dense(&x, &w, &t(&[1], &[1.0])).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
        assert_eq!(y.data(), &[2.5, 4.5]);
    }
}
