//! Final classifier: `C x K` weight matrix plus bias, softmax output.

use ndarray::ArrayView2;

use super::LayerError;
use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Debug, Clone)]
pub struct DenseSoftmax<T: Scalar> {
    /// `C x K`.
    pub weights: Tensor<T>,
    /// `K`.
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseSoftmax<T> {
    pub fn in_features(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.weights.shape()[1]
    }

    /// `N x C -> (logits N x K, probs N x K)`. With `zero_bias` the stored
    /// bias is left out of the logits.
    pub fn forward(
        &self,
        x: &Tensor<T>,
        zero_bias: bool,
    ) -> Result<(Tensor<T>, Tensor<T>), LayerError> {
        if x.rank() != 2 || x.shape()[1] != self.in_features() {
            return Err(LayerError::Tensor(TensorError::ShapeMismatch {
                left: x.shape().to_vec(),
                right: vec![x.shape()[0], self.in_features()],
            }));
        }
        let (n, c, k) = (x.shape()[0], self.in_features(), self.classes());
        let xa = ArrayView2::from_shape((n, c), x.data()).unwrap();
        let wa = ArrayView2::from_shape((c, k), self.weights.data()).unwrap();
        let mut logits = xa.dot(&wa).into_raw_vec_and_offset().0;
        if !zero_bias {
            for row in logits.chunks_mut(k) {
                for (l, &b) in row.iter_mut().zip(self.bias.data()) {
                    *l += b;
                }
            }
        }
        let probs = softmax_rows(&logits, k);
        Ok((Tensor::new(&[n, k], logits)?, Tensor::new(&[n, k], probs)?))
    }

    /// Gradients given `d(loss)/d(logits)`.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        grad_logits: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), LayerError> {
        let (n, c, k) = (x.shape()[0], self.in_features(), self.classes());
        if grad_logits.shape() != [n, k] {
            return Err(LayerError::Tensor(TensorError::ShapeMismatch {
                left: grad_logits.shape().to_vec(),
                right: vec![n, k],
            }));
        }
        let xa = ArrayView2::from_shape((n, c), x.data()).unwrap();
        let ga = ArrayView2::from_shape((n, k), grad_logits.data()).unwrap();
        let wa = ArrayView2::from_shape((c, k), self.weights.data()).unwrap();
        let grad_w = xa.t().dot(&ga).into_raw_vec_and_offset().0;
        let grad_x = ga.dot(&wa.t()).into_raw_vec_and_offset().0;
        let mut grad_b = vec![T::zero(); k];
        for row in grad_logits.data().chunks(k) {
            for (b, &g) in grad_b.iter_mut().zip(row) {
                *b += g;
            }
        }
        Ok((
            Tensor::new(&[n, c], grad_x)?,
            Tensor::new(&[c, k], grad_w)?,
            Tensor::new(&[k], grad_b)?,
        ))
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&l| (l - max).exp()).collect();
        let total: T = exps.iter().cloned().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    out
}
