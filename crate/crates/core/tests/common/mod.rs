//! Shared test utilities: the central finite-difference gradient oracle and
//! small random-tensor helpers. Everything runs in f64 so the oracle itself
//! is not the noise floor.
//!
//! Each integration-test binary compiles this module separately and uses a
//! different subset of it, so the dead-code lint is off.
#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use melnyk_net::Tensor;

pub const FD_TOL: f64 = 1e-4;

/// Central finite differences with a relative step of 1e-5 per coordinate.
pub fn fd_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-5 * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Asserts `analytic ≈ numeric` with infinity-norm relative error < `FD_TOL`.
pub fn assert_grads_close(analytic: &[f64], numeric: &[f64], what: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: length mismatch");
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, &v| m.max(v.abs()))
        .max(1e-6);
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = (a - n).abs() / scale;
        assert!(
            rel < FD_TOL,
            "{what}[{i}]: analytic {a} vs numeric {n} (rel {rel:.3e})"
        );
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in [-1, 1], excluding a small band around 0 so kinked
/// activations (ReLU) stay differentiable at every probe point.
pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, avoid_zero: bool) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let mut v: f64 = rng.random_range(-1.0..1.0);
        if avoid_zero {
            while v.abs() < 0.05 {
                v = rng.random_range(-1.0..1.0);
            }
        }
        v
    })
}

/// Fixed random linear functional turning a tensor output into a scalar, so
/// every output element contributes to the checked gradient.
pub fn random_weights(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn dot(w: &[f64], t: &Tensor<f64>) -> f64 {
    w.iter().zip(t.data()).map(|(a, b)| a * b).sum()
}
