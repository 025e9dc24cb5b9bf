//! Finite-difference and random-input helpers shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Shape, Tensor};

/// Denominator floor for relative gradient error; keeps near-zero components
/// from turning f32 rounding noise into large ratios.
pub const REL_FLOOR: f64 = 0.1;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(r: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
    (0..len).map(|_| r.random_range(-1.0f32..1.0)).collect()
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    Tensor::from_vec(shape, random_vec(r, shape.len())).unwrap()
}

/// Central differences of `f` around `base`, one coordinate at a time.
pub fn numeric_grad(base: &[f32], h: f32, mut f: impl FnMut(&[f32]) -> f64) -> Vec<f64> {
    let mut v = base.to_vec();
    (0..base.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + h;
            let plus = f(&v);
            v[i] = orig - h;
            let minus = f(&v);
            v[i] = orig;
            (plus - minus) / (2.0 * h as f64)
        })
        .collect()
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn check_close_rel(analytic: &[f32], numeric: &[f64], tol: f64, what: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: length");
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = rel_error(a as f64, n);
        assert!(
            e <= tol,
            "{what}[{i}]: analytic {a} vs numeric {n} (rel {e:.3e})"
        );
    }
}
