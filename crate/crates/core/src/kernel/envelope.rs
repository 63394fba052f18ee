//! Norm envelopes for `ẋ = A x + B S` with bounded input.

use nalgebra::DMatrix;

use crate::linalg;

/// `min_i |Re λ_i(A)|`, the rate used by the envelope for normal `A`.
pub fn spectral_rate(a: &DMatrix<f64>) -> f64 {
    linalg::slowest_decay(a)
}

/// `-μ₂(A)`, minus the largest eigenvalue of `(A + Aᵀ)/2`. It guarantees
/// `‖e^{At}‖ ≤ e^{-rate·t}` for any `A` and equals [`spectral_rate`] when
/// `A` is normal and Hurwitz.
pub fn contraction_rate(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    -sym.symmetric_eigenvalues().max()
}

/// `e^{-r t} x₀ + (g/r)(1 - e^{-r t})`, with the `r → 0` limit `x₀ + g t`.
pub fn envelope(x0: f64, rate: f64, gain: f64, t: f64) -> f64 {
    let decay = (-rate * t).exp();
    let growth = if (rate * t).abs() < 1e-12 {
        t
    } else {
        -(-rate * t).exp_m1() / rate
    };
    decay * x0 + gain * growth
}
