//! Global pooling heads: plain spatial averaging (GAP), a trainable
//! per-position weighting (GWAP), and a trainable per-channel scaling of the
//! spatial sum (GWOAP).

use super::LayerError;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Gap,
    Gwoap,
    Gwap,
}

#[derive(Debug, Clone)]
pub enum PoolingHead<T: Scalar> {
    Gap,
    /// 1-D trainable kernel, one weight per channel.
    Gwoap { kernel: Tensor<T> },
    /// 3-D trainable kernel, one weight per spatial position and channel.
    Gwap { kernel: Tensor<T> },
}

impl<T: Scalar> PoolingHead<T> {
    pub fn kind(&self) -> HeadKind {
        match self {
            PoolingHead::Gap => HeadKind::Gap,
            PoolingHead::Gwoap { .. } => HeadKind::Gwoap,
            PoolingHead::Gwap { .. } => HeadKind::Gwap,
        }
    }

    pub fn kernel(&self) -> Option<&Tensor<T>> {
        match self {
            PoolingHead::Gap => None,
            PoolingHead::Gwoap { kernel } | PoolingHead::Gwap { kernel } => Some(kernel),
        }
    }

    fn check(&self, shape: &[usize]) -> Result<(), LayerError> {
        let ok = match self {
            PoolingHead::Gap => true,
            PoolingHead::Gwoap { kernel } => kernel.shape() == [shape[2]],
            PoolingHead::Gwap { kernel } => kernel.shape() == shape,
        };
        if ok {
            Ok(())
        } else {
            Err(LayerError::KernelMismatch {
                kernel: self.kernel().map(|k| k.shape().to_vec()).unwrap_or_default(),
                input: shape.to_vec(),
            })
        }
    }

    /// Pools one `H x W x C` feature map down to a `C` vector.
    pub fn forward(&self, feat: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        if feat.rank() != 3 {
            return Err(LayerError::BadRank {
                expected: 3,
                shape: feat.shape().to_vec(),
            });
        }
        self.check(feat.shape())?;
        let (h, w, c) = (feat.shape()[0], feat.shape()[1], feat.shape()[2]);
        let mut out = vec![T::zero(); c];
        match self {
            PoolingHead::Gap => {
                for (i, &v) in feat.data().iter().enumerate() {
                    out[i % c] += v;
                }
                let hw = T::from_f64((h * w) as f64);
                for o in out.iter_mut() {
                    *o /= hw;
                }
            }
            PoolingHead::Gwoap { kernel } => {
                for (i, &v) in feat.data().iter().enumerate() {
                    out[i % c] += v;
                }
                for (o, &k) in out.iter_mut().zip(kernel.data()) {
                    *o *= k;
                }
            }
            PoolingHead::Gwap { kernel } => {
                for (i, &v) in feat.data().iter().enumerate() {
                    out[i % c] += kernel.data()[i] * v;
                }
            }
        }
        Tensor::new(&[c], out).map_err(Into::into)
    }

    /// Gradients w.r.t. the feature map and (for GWAP/GWOAP) the kernel.
    pub fn backward(
        &self,
        feat: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Option<Tensor<T>>), LayerError> {
        self.check(feat.shape())?;
        let (h, w, c) = (feat.shape()[0], feat.shape()[1], feat.shape()[2]);
        if grad_out.shape() != [c] {
            return Err(LayerError::Tensor(
                crate::tensor::TensorError::ShapeMismatch {
                    left: grad_out.shape().to_vec(),
                    right: vec![c],
                },
            ));
        }
        let g = grad_out.data();
        match self {
            PoolingHead::Gap => {
                let hw = T::from_f64((h * w) as f64);
                let grad_feat =
                    Tensor::from_fn(feat.shape(), |i| g[i % c] / hw);
                Ok((grad_feat, None))
            }
            PoolingHead::Gwoap { kernel } => {
                let grad_feat =
                    Tensor::from_fn(feat.shape(), |i| g[i % c] * kernel.data()[i % c]);
                let mut gk = vec![T::zero(); c];
                for (i, &v) in feat.data().iter().enumerate() {
                    gk[i % c] += v;
                }
                for (gkv, &gv) in gk.iter_mut().zip(g) {
                    *gkv *= gv;
                }
                Ok((grad_feat, Some(Tensor::new(&[c], gk)?)))
            }
            PoolingHead::Gwap { kernel } => {
                let grad_feat =
                    Tensor::from_fn(feat.shape(), |i| g[i % c] * kernel.data()[i]);
                let grad_kernel = Tensor::from_fn(feat.shape(), |i| g[i % c] * feat.data()[i]);
                Ok((grad_feat, Some(grad_kernel)))
            }
        }
    }
}
