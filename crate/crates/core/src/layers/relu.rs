//! Rectified linear unit.

use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Masks the upstream gradient where the forward input was <= 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(x.shape(), grad_out.shape());
    Tensor::new(
        x.shape(),
        x.data()
            .iter()
            .zip(grad_out.data())
            .map(|(&xi, &g)| if xi > T::zero() { g } else { T::zero() })
            .collect(),
    )
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_cases() {
        let x = Tensor::new(&[3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn all_positive_is_identity() {
        let x = Tensor::from_fn(&[4], |i| i as f32 + 1.0);
        assert_eq!(relu(&x).data(), x.data());
    }

    #[test]
    fn backward_mask_rule() {
        let x = Tensor::new(&[2], vec![-1.0f32, 2.0]).unwrap();
        let g = Tensor::new(&[2], vec![5.0f32, 5.0]).unwrap();
        assert_eq!(relu_backward(&x, &g).data(), &[0.0, 5.0]);
    }
}
