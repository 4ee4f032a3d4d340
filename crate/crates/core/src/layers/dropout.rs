//! Inverted dropout: survivors are scaled at train time so inference is a
//! pure identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Mode;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub p_drop: f64,
    pub rng_seed: u64,
}

impl Dropout {
    pub fn new(p_drop: f64, rng_seed: u64) -> Self {
        assert!((0.0..1.0).contains(&p_drop));
        Dropout { p_drop, rng_seed }
    }

    /// The mask derives from `(rng_seed, salt)` only, so a given call site is
    /// reproducible regardless of execution order.
    pub fn forward<T: Scalar>(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        salt: u64,
    ) -> (Tensor<T>, Option<Vec<bool>>) {
        if mode == Mode::Infer || self.p_drop == 0.0 {
            return (x.clone(), None);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.rng_seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let keep_scale = T::from_f64(1.0 / (1.0 - self.p_drop));
        let mask: Vec<bool> = (0..x.len())
            .map(|_| rng.random::<f64>() >= self.p_drop)
            .collect();
        let out = Tensor::new(
            x.shape(),
            x.data()
                .iter()
                .zip(&mask)
                .map(|(&v, &keep)| if keep { v * keep_scale } else { T::zero() })
                .collect(),
        )
        .unwrap();
        (out, Some(mask))
    }

    pub fn backward<T: Scalar>(&self, grad_out: &Tensor<T>, mask: Option<&Vec<bool>>) -> Tensor<T> {
        match mask {
            None => grad_out.clone(),
            Some(mask) => {
                let keep_scale = T::from_f64(1.0 / (1.0 - self.p_drop));
                Tensor::new(
                    grad_out.shape(),
                    grad_out
                        .data()
                        .iter()
                        .zip(mask)
                        .map(|(&g, &keep)| if keep { g * keep_scale } else { T::zero() })
                        .collect(),
                )
                .unwrap()
            }
        }
    }
}
