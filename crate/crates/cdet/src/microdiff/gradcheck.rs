//! Central finite-difference verification helpers shared by unit tests, the
//! acceptance suite, and the gradient-check example.

use super::tensor::Tensor;

/// Probe step for central differences.
pub const EPS: f64 = 1e-4;

/// Relative disagreement between an analytic and a numeric derivative.
/// Pairs that are both essentially zero count as exact agreement.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-8 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Deterministic pseudorandom projection weights in [-1, 1], used to reduce a
/// tensor-valued op to a scalar so one backward pass covers every output.
pub fn weights_for(len: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn weighted_sum(values: &[f64], weights: &[f64]) -> f64 {
    assert_eq!(values.len(), weights.len());
    values.iter().zip(weights).map(|(v, w)| v * w).sum()
}

/// Perturbs every entry of `x` by +-EPS, evaluates `f`, and returns the
/// maximum relative error against the analytic gradient.
pub fn check_tensor_input_grad(
    x: &Tensor,
    analytic: &[f64],
    mut f: impl FnMut(&Tensor) -> f64,
) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + EPS;
        let hi = f(&probe);
        probe.data[i] = orig - EPS;
        let lo = f(&probe);
        probe.data[i] = orig;
        let numeric = (hi - lo) / (2.0 * EPS);
        worst = worst.max(rel_error(analytic[i], numeric));
    }
    worst
}
