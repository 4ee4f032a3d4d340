//! Minimal dense tensor used by the whole engine.
//!
//! Activations are kept channel-last (`N x H x W x C`), conv kernels as
//! `R x Q x C x M`, both row-major. The element type is `f32` in normal
//! operation; `f64` exists for finite-difference gradient checking.

use std::fmt;

use thiserror::Error;

/// Element types the engine runs on.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssignOps
    + ndarray::LinalgScalar
    + std::iter::Sum
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("duplicate axis {axis}")]
    DuplicateAxis { axis: usize },
    #[error("shape {shape:?} does not match data length {len}")]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    #[error("shape entries must be >= 1, got {shape:?}")]
    ZeroDim { shape: Vec<usize> },
}

/// Dense row-major tensor of up to 4 axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDim {
                shape: shape.to_vec(),
            });
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data,
        };
        t.debug_check_finite();
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Reinterprets the same buffer under a new shape of equal volume.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self, TensorError> {
        let expect: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDim {
                shape: shape.to_vec(),
            });
        }
        if expect != self.data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape: shape.to_vec(),
                len: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, &ix) in index.iter().enumerate() {
            debug_assert!(ix < self.shape[i]);
            off = off * self.shape[i] + ix;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Engine-produced tensors must stay finite; enforced only when
    /// debug assertions are compiled in.
    pub fn debug_check_finite(&self) {
        if cfg!(debug_assertions) {
            debug_assert!(
                self.data.iter().all(|v| v.is_finite()),
                "tensor of shape {:?} contains NaN/Inf",
                self.shape
            );
        }
    }

    /// Element-wise product. `b` must either match `a`'s shape exactly or
    /// have the same rank with all leading axes equal to 1 and the last
    /// axis equal (the `1x1xC` against `HxWxC` case).
    pub fn elementwise_mul(&self, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        if self.shape == b.shape {
            let data = self
                .data
                .iter()
                .zip(&b.data)
                .map(|(&x, &y)| x * y)
                .collect();
            return Tensor::new(&self.shape, data);
        }
        let broadcastable = self.rank() == b.rank()
            && !self.shape.is_empty()
            && *b.shape.last().unwrap() == *self.shape.last().unwrap()
            && b.shape[..b.rank() - 1].iter().all(|&d| d == 1);
        if !broadcastable {
            return Err(TensorError::ShapeMismatch {
                left: self.shape.clone(),
                right: b.shape.clone(),
            });
        }
        let c = *self.shape.last().unwrap();
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| x * b.data[i % c])
            .collect();
        Tensor::new(&self.shape, data)
    }

    /// Sums out the given axes; remaining axes keep their order. Summation
    /// runs in row-major order so results are deterministic.
    pub fn reduce_sum(&self, axes: &[usize]) -> Result<Tensor<T>, TensorError> {
        let rank = self.rank();
        let mut summed = vec![false; rank];
        for &ax in axes {
            if ax >= rank {
                return Err(TensorError::InvalidAxis { axis: ax, rank });
            }
            if summed[ax] {
                return Err(TensorError::DuplicateAxis { axis: ax });
            }
            summed[ax] = true;
        }
        let out_shape: Vec<usize> = (0..rank)
            .filter(|&i| !summed[i])
            .map(|i| self.shape[i])
            .collect();
        let out_len: usize = out_shape.iter().product();
        let mut out = vec![T::zero(); out_len.max(1)];
        let mut index = vec![0usize; rank];
        for &v in &self.data {
            let mut off = 0;
            for i in 0..rank {
                if !summed[i] {
                    off = off * self.shape[i] + index[i];
                }
            }
            out[off] += v;
            // row-major increment
            for i in (0..rank).rev() {
                index[i] += 1;
                if index[i] < self.shape[i] {
                    break;
                }
                index[i] = 0;
            }
        }
        Tensor::new(&out_shape, out)
    }

    /// `out[k] = sum_c w[c,k] * x[c]` for a `CxK` weight matrix.
    pub fn matvec(w: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        if w.rank() != 2 || x.rank() != 1 || w.shape[0] != x.shape[0] {
            return Err(TensorError::ShapeMismatch {
                left: w.shape.clone(),
                right: x.shape.clone(),
            });
        }
        let (c, k) = (w.shape[0], w.shape[1]);
        let mut out = vec![T::zero(); k];
        for ci in 0..c {
            let xi = x.data[ci];
            let row = &w.data[ci * k..(ci + 1) * k];
            for (o, &wv) in out.iter_mut().zip(row) {
                *o += wv * xi;
            }
        }
        Tensor::new(&[k], out)
    }
}
