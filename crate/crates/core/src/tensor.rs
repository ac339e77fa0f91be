//! Dense row-major tensor.
//!
//! Video tensors use axis order `(N, C, T, H, W)`; image tensors `(N, C, H, W)`.

use crate::error::{GsmError, Result};
use crate::scalar::Scalar;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

fn checked_numel(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(GsmError::shape("rank", "tensor rank must be at least 1"));
    }
    let mut n: usize = 1;
    for (axis, &e) in shape.iter().enumerate() {
        if e == 0 {
            return Err(GsmError::shape(
                format!("axis {axis}"),
                "extent must be >= 1",
            ));
        }
        n = n
            .checked_mul(e)
            .ok_or_else(|| GsmError::shape(format!("axis {axis}"), "element count overflows"))?;
    }
    Ok(n)
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let n = checked_numel(shape)?;
        if n != data.len() {
            return Err(GsmError::shape(
                "elements",
                format!("shape {:?} needs {} elements, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let n = checked_numel(shape).expect("valid shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, F::one())
    }

    pub fn scalar(value: F) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Elements drawn from N(0, std²).
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n = checked_numel(shape).expect("valid shape");
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                F::from_f64_lossy(z * std)
            })
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Elements drawn uniformly from `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = checked_numel(shape).expect("valid shape");
        let data = (0..n)
            .map(|_| F::from_f64_lossy(rng.gen_range(lo..hi)))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = checked_numel(shape)?;
        if n != self.data.len() {
            return Err(GsmError::shape(
                "elements",
                format!("cannot reshape {:?} into {:?}", self.shape, shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Result<Self> {
        self.expect_same_shape(other, "operand")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: F) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "operand")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<F> {
        self.expect_same_shape(other, "operand")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<F> {
        self.expect_same_shape(other, "operand")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(F::zero(), F::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| G::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub(crate) fn expect_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(GsmError::shape(
                what,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    /// Splits a tensor of rank >= 2 as `(outer, channels, inner)` around axis 1.
    pub(crate) fn channel_layout(&self) -> Result<(usize, usize, usize)> {
        if self.rank() < 2 {
            return Err(GsmError::shape("channel", "tensor needs a channel axis"));
        }
        let inner: usize = self.shape[2..].iter().product();
        Ok((self.shape[0], self.shape[1], inner))
    }

    /// Copy of channels `start..start+len` along axis 1.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let (n, c, inner) = self.channel_layout()?;
        if len == 0 || start + len > c {
            return Err(GsmError::shape(
                "channel",
                format!("slice {start}..{} out of {c}", start + len),
            ));
        }
        let mut data = Vec::with_capacity(n * len * inner);
        for b in 0..n {
            let off = (b * c + start) * inner;
            data.extend_from_slice(&self.data[off..off + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[1] = len;
        Tensor::new(&shape, data)
    }

    /// Concatenation along axis 1.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| GsmError::InvalidArgument("concat of zero tensors".into()))?;
        let (n, _, inner) = first.channel_layout()?;
        let mut total_c = 0;
        for p in parts {
            let (pn, pc, pinner) = p.channel_layout()?;
            if pn != n || pinner != inner || p.shape[2..] != first.shape[2..] {
                return Err(GsmError::shape(
                    "non-channel",
                    format!("concat {:?} with {:?}", first.shape, p.shape),
                ));
            }
            total_c += pc;
        }
        let mut data = Vec::with_capacity(n * total_c * inner);
        for b in 0..n {
            for p in parts {
                let pc = p.shape[1];
                let off = b * pc * inner;
                data.extend_from_slice(&p.data[off..off + pc * inner]);
            }
        }
        let mut shape = first.shape.clone();
        shape[1] = total_c;
        Tensor::new(&shape, data)
    }

    /// Reverses the time axis of a `(C, T, H, W)` or `(N, C, T, H, W)` tensor.
    pub fn reverse_time(&self) -> Result<Self> {
        let order: Vec<usize> = match self.rank() {
            4 => (0..self.shape[1]).rev().collect(),
            5 => (0..self.shape[2]).rev().collect(),
            _ => return Err(GsmError::shape("rank", "expected a clip of rank 4 or 5")),
        };
        self.reorder_time(&order)
    }

    /// Output frame `t` is input frame `order[t]`.
    pub fn reorder_time(&self, order: &[usize]) -> Result<Self> {
        let (outer, t, plane) = match self.rank() {
            4 => (self.shape[0], self.shape[1], self.shape[2] * self.shape[3]),
            5 => (
                self.shape[0] * self.shape[1],
                self.shape[2],
                self.shape[3] * self.shape[4],
            ),
            _ => return Err(GsmError::shape("rank", "expected a clip of rank 4 or 5")),
        };
        if order.len() != t || order.iter().any(|&i| i >= t) {
            return Err(GsmError::shape("time", "frame order does not match T"));
        }
        let mut data = Vec::with_capacity(self.data.len());
        for o in 0..outer {
            for &src in order {
                let off = (o * t + src) * plane;
                data.extend_from_slice(&self.data[off..off + plane]);
            }
        }
        Tensor::new(&self.shape, data)
    }
}
