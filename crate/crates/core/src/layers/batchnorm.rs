//! Batch normalization over the `N x H x W` axes, one statistic per channel.

use super::LayerError;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct BatchNorm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub moving_mean: Tensor<T>,
    pub moving_var: Tensor<T>,
    pub eps: T,
    pub momentum: T,
    /// Train-mode batches seen; drives the moving-average warmup ramp.
    pub batches_seen: u64,
}

/// What backward needs from the train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T: Scalar> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize, eps: T, momentum: T) -> Self {
        BatchNorm {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            moving_mean: Tensor::zeros(&[channels]),
            moving_var: Tensor::full(&[channels], T::one()),
            eps,
            momentum,
            batches_seen: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape()[0]
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize), LayerError> {
        if x.rank() != 4 {
            return Err(LayerError::BadRank {
                expected: 4,
                shape: x.shape().to_vec(),
            });
        }
        let c = x.shape()[3];
        if c != self.channels() {
            return Err(LayerError::ChannelMismatch {
                input: c,
                expected: self.channels(),
            });
        }
        Ok((x.len() / c, c))
    }

    /// Inference-mode normalization with the stored moving statistics.
    pub fn forward_infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        let (_, c) = self.check_input(x)?;
        let mut out = x.clone();
        let scale: Vec<T> = (0..c)
            .map(|ci| self.gamma.data()[ci] / (self.moving_var.data()[ci] + self.eps).sqrt())
            .collect();
        let shift: Vec<T> = (0..c)
            .map(|ci| self.beta.data()[ci] - scale[ci] * self.moving_mean.data()[ci])
            .collect();
        for row in out.data_mut().chunks_exact_mut(c) {
            for (ci, v) in row.iter_mut().enumerate() {
                *v = scale[ci] * *v + shift[ci];
            }
        }
        out.debug_check_finite();
        Ok(out)
    }

    /// Train-mode normalization with batch statistics; updates moving stats.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>), LayerError> {
        let (count, c) = self.check_input(x)?;
        if x.shape()[0] < 2 {
            return Err(LayerError::DegenerateBatch);
        }
        let n = T::from_f64(count as f64);
        let mut mean = vec![T::zero(); c];
        for row in x.data().chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![T::zero(); c];
        for row in x.data().chunks_exact(c) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= n;
        }
        let inv_std: Vec<T> = (0..c).map(|ci| T::one() / (var[ci] + self.eps).sqrt()).collect();

        let mut xhat = x.clone();
        for row in xhat.data_mut().chunks_exact_mut(c) {
            for ((v, &m), &s) in row.iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - m) * s;
            }
        }
        let mut out = xhat.clone();
        let gamma = self.gamma.data();
        let beta = self.beta.data();
        for row in out.data_mut().chunks_exact_mut(c) {
            for ((v, &g), &b) in row.iter_mut().zip(gamma).zip(beta) {
                *v = g * *v + b;
            }
        }

        // Warmup ramp: behaves as a cumulative average for the first batches,
        // then settles at the configured momentum. Without it the moving stats
        // keep a large fraction of their init values over a short run.
        let t = T::from_f64(self.batches_seen as f64);
        let eff = self.momentum.min(t / (t + T::one()));
        for ci in 0..c {
            let mm = &mut self.moving_mean.data_mut()[ci];
            *mm = eff * *mm + (T::one() - eff) * mean[ci];
            let mv = &mut self.moving_var.data_mut()[ci];
            *mv = eff * *mv + (T::one() - eff) * var[ci];
        }
        self.batches_seen += 1;

        out.debug_check_finite();
        Ok((out, BnCache { xhat, inv_std }))
    }

    /// Gradients w.r.t. input, gamma and beta from a train-mode forward.
    pub fn backward(
        &self,
        cache: &BnCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), LayerError> {
        let (count, c) = self.check_input(grad_out)?;
        let n = T::from_f64(count as f64);
        let xhat = cache.xhat.data();
        let dy = grad_out.data();

        let mut dbeta = vec![T::zero(); c];
        let mut dgamma = vec![T::zero(); c];
        for (dyr, xr) in dy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
            for (((db, dg), &g), &xh) in dbeta.iter_mut().zip(dgamma.iter_mut()).zip(dyr).zip(xr) {
                *db += g;
                *dg += g * xh;
            }
        }

        // dx = gamma*inv_std/N * (N*dy - sum(dy) - xhat * sum(dy*xhat))
        let coef: Vec<T> = (0..c)
            .map(|ci| self.gamma.data()[ci] * cache.inv_std[ci] / n)
            .collect();
        let mut dx = grad_out.clone();
        let mut row_idx = 0usize;
        for row in dx.data_mut().chunks_exact_mut(c) {
            let xr = &xhat[row_idx..row_idx + c];
            for (ci, v) in row.iter_mut().enumerate() {
                let term = n * *v - dbeta[ci] - xr[ci] * dgamma[ci];
                *v = coef[ci] * term;
            }
            row_idx += c;
        }
        Ok((
            dx,
            Tensor::new(&[c], dgamma)?,
            Tensor::new(&[c], dbeta)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infer_identity_transform() {
        let bn = BatchNorm::<f64>::new(2, 1e-12, 0.99);
        let x = Tensor::from_fn(&[1, 2, 2, 2], |i| i as f64);
        let y = bn.forward_infer(&x).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn infer_zero_gamma_is_constant_beta() {
        let mut bn = BatchNorm::<f32>::new(3, 1e-3, 0.99);
        bn.gamma = Tensor::zeros(&[3]);
        bn.beta = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let x = Tensor::from_fn(&[2, 1, 1, 3], |i| i as f32 * 10.0);
        let y = bn.forward_infer(&x).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn train_normalizes_pair_to_unit_spread() {
        let mut bn = BatchNorm::<f64>::new(1, 1e-12, 0.99);
        let x = Tensor::new(&[2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        let (y, _) = bn.forward_train(&x).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-5);
        assert!((y.data()[1] - 1.0).abs() < 1e-5);
        // first batch: moving stats equal the batch stats thanks to the ramp
        assert!((bn.moving_mean.data()[0] - 2.0).abs() < 1e-12);
        assert!((bn.moving_var.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn train_batch_of_one_is_degenerate() {
        let mut bn = BatchNorm::<f32>::new(1, 1e-3, 0.99);
        let x = Tensor::zeros(&[1, 2, 2, 1]);
        assert!(matches!(
            bn.forward_train(&x),
            Err(LayerError::DegenerateBatch)
        ));
    }

    #[test]
    fn channel_mismatch_rejected() {
        let bn = BatchNorm::<f32>::new(4, 1e-3, 0.99);
        let x = Tensor::zeros(&[2, 2, 2, 3]);
        assert!(matches!(
            bn.forward_infer(&x),
            Err(LayerError::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut bn = BatchNorm::<f64>::new(2, 1e-3, 0.99);
        let x = Tensor::from_fn(&[2, 2, 2, 2], |i| (i as f64).sin());
        let (_, cache) = bn.forward_train(&x).unwrap();
        let g = Tensor::zeros(&[2, 2, 2, 2]);
        let (dx, dgamma, dbeta) = bn.backward(&cache, &g).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(dgamma.data().iter().all(|&v| v == 0.0));
        assert!(dbeta.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_beta_is_channel_sum_of_upstream() {
        let mut bn = BatchNorm::<f64>::new(2, 1e-3, 0.99);
        let x = Tensor::from_fn(&[2, 1, 2, 2], |i| (i as f64 * 0.7).cos());
        let (_, cache) = bn.forward_train(&x).unwrap();
        let g = Tensor::from_fn(&[2, 1, 2, 2], |i| i as f64);
        let (_, _, dbeta) = bn.backward(&cache, &g).unwrap();
        // channel 0 collects even flat indices, channel 1 odd ones
        assert!((dbeta.data()[0] - (0.0 + 2.0 + 4.0 + 6.0)).abs() < 1e-12);
        assert!((dbeta.data()[1] - (1.0 + 3.0 + 5.0 + 7.0)).abs() < 1e-12);
    }
}
