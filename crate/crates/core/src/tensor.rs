//! Dense row-major tensors and the primitive operations the rest of the crate builds on.
//!
//! Conventions:
//! - every dimension is at least 1 and every value is finite;
//! - data is stored row-major (last axis fastest);
//! - broadcasting aligns trailing axes, and a right-hand axis of size 1 (or a
//!   missing leading axis) stretches to the left-hand size;
//! - reductions accumulate in a fixed order: a linear scan over the row-major
//!   index of the elements being combined.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    All,
    Index(usize),
}

/// Smallest divisor magnitude accepted by [`BinaryOp::Div`].
pub const DIVISION_GUARD: f64 = 1e-300;

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::shape("rank must be at least 1"));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::shape(format!("zero-sized dimension in {shape:?}")));
    }
    Ok(())
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        check_shape(&shape)?;
        if numel(&shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {} values, got {}",
                numel(&shape),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("element {i} of tensor {shape:?}")));
        }
        Ok(Tensor { shape, data })
    }

    /// Copies `values` into a new tensor of the given shape.
    pub fn from_slice(shape: &[usize], values: &[S]) -> Result<Self> {
        Self::new(shape.to_vec(), values.to_vec())
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| S::lit(v)).collect())
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: &[usize], value: S) -> Result<Self> {
        check_shape(shape)?;
        Self::new(shape.to_vec(), vec![value; numel(shape)])
    }

    pub fn scalar(value: S) -> Result<Self> {
        Self::new(vec![1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<S> {
        if self.data.len() != 1 {
            return Err(Error::shape(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn get(&self, index: &[usize]) -> Result<S> {
        if index.len() != self.rank() || index.iter().zip(&self.shape).any(|(&i, &d)| i >= d) {
            return Err(Error::shape(format!(
                "index {index:?} out of bounds for {:?}",
                self.shape
            )));
        }
        let off: usize = index
            .iter()
            .zip(strides(&self.shape))
            .map(|(i, s)| i * s)
            .sum();
        Ok(self.data[off])
    }

    /// Elementwise map; fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(S) -> S) -> Result<Self> {
        Self::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn cast<T: Scalar>(&self) -> Result<Tensor<T>> {
        Tensor::new(
            self.shape.clone(),
            self.data.iter().map(|&v| T::lit(v.as_f64())).collect(),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if numel(shape) != self.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank {
            return Err(Error::shape(format!("permutation {axes:?} for rank {rank}")));
        }
        for &a in axes {
            if a >= rank || seen[a] {
                return Err(Error::shape(format!("invalid permutation {axes:?}")));
            }
            seen[a] = true;
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut data = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; rank];
        for _ in 0..self.len() {
            let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
            data.push(self.data[off]);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }

    /// `a op b`, with `b` broadcast onto `a`'s shape.
    pub fn elementwise(op: BinaryOp, a: &Self, b: &Self) -> Result<Self> {
        let map = broadcast_map(&a.shape, &b.shape)?;
        let guard = S::lit(DIVISION_GUARD).max(S::min_positive_value());
        let mut out = Vec::with_capacity(a.len());
        for (i, &x) in a.data.iter().enumerate() {
            let y = b.data[map.index(i)];
            out.push(match op {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
                BinaryOp::Div => {
                    if y.abs() < guard {
                        return Err(Error::DivisionByZero(y.as_f64()));
                    }
                    x / y
                }
            });
        }
        Self::new(a.shape.clone(), out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Self::elementwise(BinaryOp::Add, self, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Self::elementwise(BinaryOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        Self::elementwise(BinaryOp::Mul, self, other)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        Self::elementwise(BinaryOp::Div, self, other)
    }

    /// Matrix product of `[m, k]` by `[k, n]`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::shape(format!(
                "matmul {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = S::zero();
                for p in 0..k {
                    acc = acc + self.data[i * k + p] * other.data[p * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        Self::new(vec![m, n], out)
    }

    pub fn transpose2(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::shape(format!("transpose of rank {}", self.rank())));
        }
        self.permute(&[1, 0])
    }

    pub fn concat(axis: usize, parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of an empty list"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::shape(format!("concat axis {axis} for rank {rank}")));
        }
        for p in parts {
            let off_axis_equal = p.rank() == rank
                && (0..rank).all(|d| d == axis || p.shape[d] == first.shape[d]);
            if !off_axis_equal {
                return Err(Error::shape(format!(
                    "concat along {axis}: {:?} vs {:?}",
                    first.shape, p.shape
                )));
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let mut shape = first.shape.clone();
        shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        Ok(Tensor { shape, data })
    }

    /// Splits into two equal halves along `axis`; the first half holds the lower indices.
    pub fn split_half(&self, axis: usize) -> Result<(Self, Self)> {
        if axis >= self.rank() {
            return Err(Error::shape(format!(
                "split axis {axis} for rank {}",
                self.rank()
            )));
        }
        let size = self.shape[axis];
        if size % 2 != 0 {
            return Err(Error::shape(format!(
                "cannot split odd size {size} along axis {axis}"
            )));
        }
        Ok((
            self.narrow(axis, 0, size / 2)?,
            self.narrow(axis, size / 2, size / 2)?,
        ))
    }

    /// Contiguous sub-range `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.rank() || len == 0 || start + len > self.shape[axis] {
            return Err(Error::shape(format!(
                "narrow({axis}, {start}, {len}) on {:?}",
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let full = self.shape[axis] * inner;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full + start * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Tensor { shape, data })
    }

    /// Sum or mean over one axis (the axis is removed; a rank-1 input yields `[1]`)
    /// or over all elements (yields `[1]`).
    pub fn reduce(&self, op: ReduceOp, axis: Axis) -> Result<Self> {
        let (shape, data, count) = match axis {
            Axis::All => {
                let mut acc = S::zero();
                for &v in &self.data {
                    acc = acc + v;
                }
                (vec![1], vec![acc], self.len())
            }
            Axis::Index(ax) => {
                if ax >= self.rank() {
                    return Err(Error::shape(format!(
                        "axis {ax} out of range for rank {}",
                        self.rank()
                    )));
                }
                let outer: usize = self.shape[..ax].iter().product();
                let inner: usize = self.shape[ax + 1..].iter().product();
                let n = self.shape[ax];
                let mut out = Vec::with_capacity(outer * inner);
                for o in 0..outer {
                    for i in 0..inner {
                        let mut acc = S::zero();
                        for k in 0..n {
                            acc = acc + self.data[(o * n + k) * inner + i];
                        }
                        out.push(acc);
                    }
                }
                let mut shape: Vec<usize> = self.shape.clone();
                shape.remove(ax);
                if shape.is_empty() {
                    shape.push(1);
                }
                (shape, out, n)
            }
        };
        let data = match op {
            ReduceOp::Sum => data,
            ReduceOp::Mean => {
                let c = S::from_count(count);
                data.into_iter().map(|v| v / c).collect()
            }
        };
        Self::new(shape, data)
    }

    pub fn sum_all(&self) -> Result<Self> {
        self.reduce(ReduceOp::Sum, Axis::All)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<S> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(S::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

/// Mapping from a left-hand flat index to the broadcast right-hand flat index.
#[derive(Clone, Debug)]
pub(crate) enum BroadcastMap {
    Same,
    Strided {
        shape: Vec<usize>,
        src_strides: Vec<usize>,
    },
}

impl BroadcastMap {
    pub(crate) fn index(&self, flat: usize) -> usize {
        match self {
            BroadcastMap::Same => flat,
            BroadcastMap::Strided { shape, src_strides } => {
                let mut rem = flat;
                let mut off = 0;
                for ax in (0..shape.len()).rev() {
                    let i = rem % shape[ax];
                    rem /= shape[ax];
                    off += i * src_strides[ax];
                }
                off
            }
        }
    }
}

/// Checks that `b` broadcasts onto `a` under the trailing-axes rule.
pub(crate) fn broadcast_map(a: &[usize], b: &[usize]) -> Result<BroadcastMap> {
    if a == b {
        return Ok(BroadcastMap::Same);
    }
    if b.len() > a.len() {
        return Err(Error::shape(format!("cannot broadcast {b:?} onto {a:?}")));
    }
    let lead = a.len() - b.len();
    let b_strides = strides(b);
    let mut src_strides = vec![0; a.len()];
    for (j, &bd) in b.iter().enumerate() {
        let ad = a[lead + j];
        if bd == ad {
            src_strides[lead + j] = b_strides[j];
        } else if bd != 1 {
            return Err(Error::shape(format!("cannot broadcast {b:?} onto {a:?}")));
        }
    }
    Ok(BroadcastMap::Strided {
        shape: a.to_vec(),
        src_strides,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    type T = Tensor<f64>;

    fn t(shape: &[usize], v: &[f64]) -> T {
        T::from_slice(shape, v).unwrap()
    }

    #[test]
    fn create_and_validate() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t(&[3], &[0.0; 3]).data(), &[0.0; 3]);
        assert!(matches!(
            T::from_slice(&[2], &[1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(T::from_slice(&[3], &[1.0]).is_err());
        assert!(T::from_slice(&[0], &[]).is_err());
        assert!(T::from_slice(&[], &[]).is_err());
    }

    #[test]
    fn elementwise_examples() {
        assert_eq!(
            t(&[2], &[1.0, 2.0]).add(&t(&[2], &[3.0, 4.0])).unwrap().data(),
            &[4.0, 6.0]
        );
        let zero = T::scalar(0.0).unwrap();
        assert_eq!(
            t(&[3], &[1.0, 2.0, 3.0]).mul(&zero).unwrap().data(),
            &[0.0, 0.0, 0.0]
        );
        assert!(matches!(
            t(&[1], &[1.0]).div(&t(&[1], &[1e-301])),
            Err(Error::DivisionByZero(_))
        ));
        assert!(t(&[2, 3], &[0.0; 6]).add(&t(&[2], &[1.0, 1.0])).is_err());
    }

    #[test]
    fn broadcast_trailing_axes() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let row = t(&[3], &[10.0, 20.0, 30.0]);
        assert_eq!(
            a.add(&row).unwrap().data(),
            &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]
        );
        let col = t(&[2, 1], &[1.0, 2.0]);
        assert_eq!(a.mul(&col).unwrap().data(), &[1.0, 2.0, 3.0, 8.0, 10.0, 12.0]);
    }

    #[test]
    fn overflow_is_an_error() {
        let big = t(&[1], &[f64::MAX]);
        assert!(matches!(big.add(&big), Err(Error::NonFinite(_))));
    }

    #[test]
    fn matmul_examples() {
        let id = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(id.matmul(&m).unwrap(), m);
        let r = t(&[1, 2], &[1.0, 2.0]).matmul(&t(&[2, 1], &[3.0, 4.0])).unwrap();
        assert_eq!(r.shape(), &[1, 1]);
        assert_eq!(r.data(), &[11.0]);
        assert!(t(&[2, 3], &[0.0; 6]).matmul(&t(&[2, 3], &[0.0; 6])).is_err());
    }

    #[test]
    fn concat_examples() {
        let a = T::zeros(&[4, 3]).unwrap();
        let b = T::full(&[4, 1], 1.0).unwrap();
        assert_eq!(T::concat(1, &[&a, &b]).unwrap().shape(), &[4, 4]);
        let c = T::concat(0, &[&t(&[1], &[1.0]), &t(&[1], &[2.0])]).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0]);
        let x = T::zeros(&[2, 3]).unwrap();
        let y = T::zeros(&[3, 3]).unwrap();
        assert!(T::concat(1, &[&x, &y]).is_err());
        assert!(T::concat(0, &[]).is_err());
    }

    #[test]
    fn concat_interleaves_rows() {
        let a = t(&[2, 1], &[1.0, 2.0]);
        let b = t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]);
        let c = T::concat(1, &[&a, &b]).unwrap();
        assert_eq!(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn split_half_examples() {
        let (a, b) = t(&[4], &[1.0, 2.0, 3.0, 4.0]).split_half(0).unwrap();
        assert_eq!(a.data(), &[1.0, 2.0]);
        assert_eq!(b.data(), &[3.0, 4.0]);
        let (u, v) = T::zeros(&[5, 6]).unwrap().split_half(1).unwrap();
        assert_eq!(u.shape(), &[5, 3]);
        assert_eq!(v.shape(), &[5, 3]);
        assert!(t(&[3], &[1.0, 2.0, 3.0]).split_half(0).is_err());
    }

    #[test]
    fn reduce_examples() {
        let m = t(&[3], &[1.0, 2.0, 3.0]).reduce(ReduceOp::Mean, Axis::All).unwrap();
        assert_eq!(m.data(), &[2.0]);
        let s = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])
            .reduce(ReduceOp::Sum, Axis::Index(0))
            .unwrap();
        assert_eq!(s.data(), &[4.0, 6.0]);
        let single = t(&[1], &[5.0]).reduce(ReduceOp::Mean, Axis::All).unwrap();
        assert_eq!(single.data(), &[5.0]);
        assert!(t(&[2], &[1.0, 2.0])
            .reduce(ReduceOp::Sum, Axis::Index(1))
            .is_err());
    }

    #[test]
    fn permute_transposes() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = a.permute(&[1, 0]).unwrap();
        assert_eq!(p.shape(), &[3, 2]);
        assert_eq!(p.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert!(a.permute(&[0, 0]).is_err());
    }
}
