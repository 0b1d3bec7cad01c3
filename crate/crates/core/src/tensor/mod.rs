//! Dense tensors and a small reverse-mode differentiation engine.
//!
//! [`Tensor`] is a plain value: a shape of up to four extents and a row-major
//! data buffer. Rank-4 tensors are read as `batch × channel × height × width`.
//! [`Var`] wraps a tensor in a node of an eagerly recorded computation graph;
//! calling [`Var::backward`] on a scalar result fills in gradients of every
//! node that requires them.
//!
//! Convolutions use the cross-correlation convention throughout: the kernel is
//! never flipped, so `out[o, y, x] = Σ w[o, i, ky, kx] · in[i, y·s + ky − p, x·s + kx − p]`.

mod autograd;
mod gradcheck;
pub mod io;
mod ops;

pub use autograd::{OpKind, Var};
pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::{gaussian_kernel, smooth_l1_slope, smooth_l1_value, EltwiseKind, DEFAULT_LEAKY_SLOPE};

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAX_RANK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        check_shape(shape).expect("valid shape");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        check_shape(shape).expect("valid shape");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Uniform samples in `[low, high)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], low: f64, high: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| T::lit(rng.gen_range(low..high)))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// `(batch, channels, height, width)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::shape(format!(
                "expected rank-4 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize_lossy(self.numel())
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        Ok(self.zip_map(other, |a, b| a - b)?.max_abs())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Index of element `(b, c, y, x)` in a rank-4 tensor.
    #[inline]
    pub fn idx4(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        let (_, ch, h, w) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        ((b * ch + c) * h + y) * w + x
    }

    #[inline]
    pub fn at4(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.idx4(b, c, y, x)]
    }

    /// Selects `len` channels starting at `start` from a rank-4 tensor.
    pub fn channels(&self, start: usize, len: usize) -> Result<Self> {
        let (b, c, h, w) = self.dims4()?;
        if start + len > c {
            return Err(Error::shape(format!(
                "channel range {}..{} out of {}",
                start,
                start + len,
                c
            )));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(b * len * plane);
        for bi in 0..b {
            let off = (bi * c + start) * plane;
            data.extend_from_slice(&self.data[off..off + len * plane]);
        }
        Self::new(&[b, len, h, w], data)
    }

    /// Selects one batch item, keeping rank 4.
    pub fn batch_item(&self, index: usize) -> Result<Self> {
        let (b, c, h, w) = self.dims4()?;
        if index >= b {
            return Err(Error::shape(format!("batch index {index} out of {b}")));
        }
        let n = c * h * w;
        Self::new(&[1, c, h, w], self.data[index * n..(index + 1) * n].to_vec())
    }

    /// Stacks rank-4 tensors with identical `c, h, w` along the batch axis.
    pub fn stack_batch(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("cannot stack an empty list"))?;
        let (_, c, h, w) = first.dims4()?;
        let mut data = Vec::new();
        let mut b = 0;
        for t in items {
            let (tb, tc, th, tw) = t.dims4()?;
            if (tc, th, tw) != (c, h, w) {
                return Err(Error::shape(format!(
                    "cannot stack {:?} with {:?}",
                    t.shape, first.shape
                )));
            }
            b += tb;
            data.extend_from_slice(&t.data);
        }
        Self::new(&[b, c, h, w], data)
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::shape(format!(
            "rank must be 1..={MAX_RANK}, got {:?}",
            shape
        )));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::shape(format!("zero extent in {:?}", shape)));
    }
    Ok(())
}
