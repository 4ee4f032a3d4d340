//! 3x3 stride-2 average pooling with same-style padding.
//!
//! Output spatial dims are `ceil(in/2)`. Padding is 0-before/1-after on even
//! inputs; padded cells never enter the averaging denominator, so a constant
//! map pools to the same constant.

use super::LayerError;
use crate::tensor::{Scalar, Tensor};

const WINDOW: usize = 3;
const STRIDE: usize = 2;

#[derive(Debug, Clone, Copy, Default)]
pub struct AvgPool;

pub fn pooled_dim(input: usize) -> usize {
    input.div_ceil(STRIDE)
}

fn pad_before(input: usize) -> usize {
    let out = pooled_dim(input);
    let total = ((out - 1) * STRIDE + WINDOW).saturating_sub(input);
    total / 2
}

impl AvgPool {
    /// `N x H x W x C -> N x ceil(H/2) x ceil(W/2) x C`.
    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        if x.rank() != 4 {
            return Err(LayerError::BadRank {
                expected: 4,
                shape: x.shape().to_vec(),
            });
        }
        let (n, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow) = (pooled_dim(h), pooled_dim(w));
        let (pbh, pbw) = (pad_before(h), pad_before(w));
        let mut out = Tensor::zeros(&[n, oh, ow, c]);
        for ni in 0..n {
            for oi in 0..oh {
                for oj in 0..ow {
                    let i0 = (oi * STRIDE) as isize - pbh as isize;
                    let j0 = (oj * STRIDE) as isize - pbw as isize;
                    let mut acc = vec![T::zero(); c];
                    let mut cnt = 0usize;
                    for di in 0..WINDOW {
                        let i = i0 + di as isize;
                        if i < 0 || i >= h as isize {
                            continue;
                        }
                        for dj in 0..WINDOW {
                            let j = j0 + dj as isize;
                            if j < 0 || j >= w as isize {
                                continue;
                            }
                            cnt += 1;
                            let src = ((ni * h + i as usize) * w + j as usize) * c;
                            for (a, &v) in acc.iter_mut().zip(&x.data()[src..src + c]) {
                                *a += v;
                            }
                        }
                    }
                    let denom = T::from_f64(cnt as f64);
                    let dst = ((ni * oh + oi) * ow + oj) * c;
                    for (o, a) in out.data_mut()[dst..dst + c].iter_mut().zip(acc) {
                        *o = a / denom;
                    }
                }
            }
        }
        out.debug_check_finite();
        Ok(out)
    }

    /// Distributes each output gradient uniformly over the cells it averaged.
    pub fn backward<T: Scalar>(
        &self,
        input_shape: &[usize],
        grad_out: &Tensor<T>,
    ) -> Result<Tensor<T>, LayerError> {
        let (n, h, w, c) = (
            input_shape[0],
            input_shape[1],
            input_shape[2],
            input_shape[3],
        );
        let (oh, ow) = (pooled_dim(h), pooled_dim(w));
        if grad_out.shape() != [n, oh, ow, c] {
            return Err(LayerError::Tensor(
                crate::tensor::TensorError::ShapeMismatch {
                    left: grad_out.shape().to_vec(),
                    right: vec![n, oh, ow, c],
                },
            ));
        }
        let (pbh, pbw) = (pad_before(h), pad_before(w));
        let mut grad_x = Tensor::zeros(input_shape);
        for ni in 0..n {
            for oi in 0..oh {
                for oj in 0..ow {
                    let i0 = (oi * STRIDE) as isize - pbh as isize;
                    let j0 = (oj * STRIDE) as isize - pbw as isize;
                    let mut cells = Vec::with_capacity(WINDOW * WINDOW);
                    for di in 0..WINDOW {
                        let i = i0 + di as isize;
                        if i < 0 || i >= h as isize {
                            continue;
                        }
                        for dj in 0..WINDOW {
                            let j = j0 + dj as isize;
                            if j < 0 || j >= w as isize {
                                continue;
                            }
                            cells.push((i as usize, j as usize));
                        }
                    }
                    let denom = T::from_f64(cells.len() as f64);
                    let src = ((ni * oh + oi) * ow + oj) * c;
                    for (i, j) in cells {
                        let dst = ((ni * h + i) * w + j) * c;
                        for (g, &u) in grad_x.data_mut()[dst..dst + c]
                            .iter_mut()
                            .zip(&grad_out.data()[src..src + c])
                        {
                            *g += u / denom;
                        }
                    }
                }
            }
        }
        Ok(grad_x)
    }
}
