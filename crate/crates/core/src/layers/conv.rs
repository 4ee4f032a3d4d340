//! Same-padding stride-1 2-D convolution (cross-correlation, no bias).
//!
//! Kernels are `R x Q x C x M`; activations `N x H x W x C`. The forward and
//! backward passes go through im2col plus a GEMM so full-size passes stay
//! affordable on one CPU core.

use ndarray::ArrayView2;

use super::LayerError;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub kernel: Tensor<T>,
}

impl<T: Scalar> Conv2d<T> {
    /// `kernel` must be rank 4 with odd spatial dims (same padding).
    pub fn new(kernel: Tensor<T>) -> Result<Self, LayerError> {
        if kernel.rank() != 4 || kernel.shape()[0] % 2 == 0 || kernel.shape()[1] % 2 == 0 {
            return Err(LayerError::BadRank {
                expected: 4,
                shape: kernel.shape().to_vec(),
            });
        }
        Ok(Conv2d { kernel })
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[3]
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), LayerError> {
        if x.rank() != 4 {
            return Err(LayerError::BadRank {
                expected: 4,
                shape: x.shape().to_vec(),
            });
        }
        if x.shape()[3] != self.in_channels() {
            return Err(LayerError::ChannelMismatch {
                input: x.shape()[3],
                expected: self.in_channels(),
            });
        }
        Ok(())
    }

    /// `N x H x W x C -> N x H x W x M`, spatial dims preserved.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        self.check_input(x)?;
        let (n, h, w, c) = dims4(x);
        let (r, q, _, m) = dims4(&self.kernel);
        let rqc = r * q * c;
        let hw = h * w;
        let kmat = ArrayView2::from_shape((rqc, m), self.kernel.data()).unwrap();
        let mut out = vec![T::zero(); n * hw * m];
        let mut col = vec![T::zero(); hw * rqc];
        for ni in 0..n {
            let xs = &x.data()[ni * hw * c..(ni + 1) * hw * c];
            im2col(xs, h, w, c, r, q, &mut col);
            let a = ArrayView2::from_shape((hw, rqc), &col[..]).unwrap();
            let y = a.dot(&kmat);
            out[ni * hw * m..(ni + 1) * hw * m].copy_from_slice(y.as_slice().unwrap());
        }
        let out = Tensor::new(&[n, h, w, m], out)?;
        out.debug_check_finite();
        Ok(out)
    }

    /// Gradients of the forward map w.r.t. input and kernel.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>), LayerError> {
        self.check_input(x)?;
        let (n, h, w, c) = dims4(x);
        let (r, q, _, m) = dims4(&self.kernel);
        if grad_out.shape() != [n, h, w, m] {
            return Err(LayerError::Tensor(
                crate::tensor::TensorError::ShapeMismatch {
                    left: grad_out.shape().to_vec(),
                    right: vec![n, h, w, m],
                },
            ));
        }
        let rqc = r * q * c;
        let hw = h * w;
        let kmat = ArrayView2::from_shape((rqc, m), self.kernel.data()).unwrap();
        let mut grad_x = vec![T::zero(); n * hw * c];
        let mut grad_k = ndarray::Array2::<T>::zeros((rqc, m));
        let mut col = vec![T::zero(); hw * rqc];
        for ni in 0..n {
            let xs = &x.data()[ni * hw * c..(ni + 1) * hw * c];
            let g = ArrayView2::from_shape((hw, m), &grad_out.data()[ni * hw * m..(ni + 1) * hw * m])
                .unwrap();
            im2col(xs, h, w, c, r, q, &mut col);
            let a = ArrayView2::from_shape((hw, rqc), &col[..]).unwrap();
            grad_k = grad_k + a.t().dot(&g);
            let gcol = g.dot(&kmat.t());
            let gcol = gcol.as_standard_layout();
            col2im(
                gcol.as_slice().expect("standard layout"),
                h,
                w,
                c,
                r,
                q,
                &mut grad_x[ni * hw * c..(ni + 1) * hw * c],
            );
        }
        let grad_x = Tensor::new(&[n, h, w, c], grad_x)?;
        let grad_k = Tensor::new(&[r, q, c, m], grad_k.into_raw_vec_and_offset().0)?;
        Ok((grad_x, grad_k))
    }
}

fn dims4<T: Scalar>(t: &Tensor<T>) -> (usize, usize, usize, usize) {
    let s = t.shape();
    (s[0], s[1], s[2], s[3])
}

/// Gathers zero-padded patches: row `(i*W+j)`, column `((r*Q+q)*C + c)`.
fn im2col<T: Scalar>(x: &[T], h: usize, w: usize, c: usize, r: usize, q: usize, col: &mut [T]) {
    let (pr, pq) = (r / 2, q / 2);
    let rqc = r * q * c;
    for i in 0..h {
        for j in 0..w {
            let base = (i * w + j) * rqc;
            for ri in 0..r {
                let si = i as isize + ri as isize - pr as isize;
                for qi in 0..q {
                    let sj = j as isize + qi as isize - pq as isize;
                    let dst = &mut col[base + (ri * q + qi) * c..base + (ri * q + qi + 1) * c];
                    if si >= 0 && si < h as isize && sj >= 0 && sj < w as isize {
                        let src = (si as usize * w + sj as usize) * c;
                        dst.copy_from_slice(&x[src..src + c]);
                    } else {
                        dst.fill(T::zero());
                    }
                }
            }
        }
    }
}

/// Scatter-add inverse of `im2col`.
fn col2im<T: Scalar>(col: &[T], h: usize, w: usize, c: usize, r: usize, q: usize, x: &mut [T]) {
    let (pr, pq) = (r / 2, q / 2);
    let rqc = r * q * c;
    for i in 0..h {
        for j in 0..w {
            let base = (i * w + j) * rqc;
            for ri in 0..r {
                let si = i as isize + ri as isize - pr as isize;
                if si < 0 || si >= h as isize {
                    continue;
                }
                for qi in 0..q {
                    let sj = j as isize + qi as isize - pq as isize;
                    if sj < 0 || sj >= w as isize {
                        continue;
                    }
                    let src = &col[base + (ri * q + qi) * c..base + (ri * q + qi + 1) * c];
                    let dst = (si as usize * w + sj as usize) * c;
                    for (d, &s) in x[dst..dst + c].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_kernel_counts_neighbors() {
        let x = Tensor::full(&[1, 3, 3, 1], 1.0f32);
        let conv = Conv2d::new(Tensor::full(&[3, 3, 1, 1], 1.0)).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3, 1]);
        assert_eq!(
            y.data(),
            &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]
        );
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let x = Tensor::from_fn(&[2, 4, 4, 3], |i| i as f32 * 0.1);
        let conv = Conv2d::new(Tensor::zeros(&[3, 3, 3, 2])).unwrap();
        let y = conv.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_sees_only_center_tap() {
        // 1x1 input: every off-center tap lands in the zero padding.
        let x = Tensor::new(&[1, 1, 1, 1], vec![5.0f32]).unwrap();
        let mut k = Tensor::full(&[3, 3, 1, 1], 7.0);
        k.set(&[1, 1, 0, 0], 2.0);
        let conv = Conv2d::new(k).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 4, 4, 2]);
        let conv = Conv2d::new(Tensor::zeros(&[3, 3, 3, 1])).unwrap();
        assert!(matches!(
            conv.forward(&x),
            Err(LayerError::ChannelMismatch {
                input: 2,
                expected: 3
            })
        ));
    }

    #[test]
    fn zero_upstream_grad_gives_zero_grads() {
        let x = Tensor::from_fn(&[1, 4, 4, 2], |i| (i as f32).sin());
        let conv = Conv2d::new(Tensor::from_fn(&[3, 3, 2, 3], |i| (i as f32).cos())).unwrap();
        let g = Tensor::zeros(&[1, 4, 4, 3]);
        let (gx, gk) = conv.backward(&x, &g).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(gk.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_kernel_grad_is_scalar_chain_rule() {
        let x = Tensor::new(&[1, 1, 1, 1], vec![5.0f32]).unwrap();
        let conv = Conv2d::new(Tensor::full(&[3, 3, 1, 1], 0.5)).unwrap();
        let g = Tensor::new(&[1, 1, 1, 1], vec![3.0f32]).unwrap();
        let (_, gk) = conv.backward(&x, &g).unwrap();
        assert_eq!(gk.get(&[1, 1, 0, 0]), 15.0);
        // off-center taps only ever see padding
        assert_eq!(gk.get(&[0, 0, 0, 0]), 0.0);
        assert_eq!(gk.get(&[2, 2, 0, 0]), 0.0);
    }

    #[test]
    fn forward_is_linear_in_input() {
        let a = Tensor::from_fn(&[1, 5, 5, 2], |i| (i as f32 * 0.37).sin());
        let b = Tensor::from_fn(&[1, 5, 5, 2], |i| (i as f32 * 0.11).cos());
        let conv = Conv2d::new(Tensor::from_fn(&[3, 3, 2, 2], |i| (i as f32 * 0.2).sin())).unwrap();
        let sum = Tensor::new(
            a.shape(),
            a.data().iter().zip(b.data()).map(|(&x, &y)| 2.0 * x + 3.0 * y).collect(),
        )
        .unwrap();
        let ya = conv.forward(&a).unwrap();
        let yb = conv.forward(&b).unwrap();
        let ys = conv.forward(&sum).unwrap();
        for i in 0..ys.len() {
            let expect = 2.0 * ya.data()[i] + 3.0 * yb.data()[i];
            assert!((ys.data()[i] - expect).abs() / expect.abs().max(1.0) < 1e-5);
        }
    }
}
