//! Slow, independent reference computations and random test systems.

use nalgebra::DMatrix;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use crate::hippo::gaussian;

const REFERENCE_ORDER: usize = 20;
const SCALED_NORM: f64 = 0.25;

/// `e^M` by scaling and squaring: halve `M` until `‖M‖₁ ≤ 0.25`, sum 20
/// Taylor terms directly, then square back.
pub fn expm_reference(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm1 = (0..n).map(|j| m.column(j).abs().sum()).fold(0.0, f64::max);
    let mut squarings = 0;
    while norm1 / 2f64.powi(squarings) > SCALED_NORM {
        squarings += 1;
    }
    let x = m / 2f64.powi(squarings);
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=REFERENCE_ORDER {
        term = &term * &x / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Largest singular value via SVD.
pub fn spectral_norm_svd(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// `-(GᵀG + δI) + s·(K - Kᵀ)` with `G`, `K` entries `N(0, 1/N)`. Hurwitz for
/// every `δ > 0`; symmetric when `skew = 0`.
pub fn random_stable(n: usize, delta: f64, skew: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let std = 1.0 / (n as f64).sqrt();
    let g = gaussian(n, n, std, rng);
    let mut a = -(g.transpose() * &g) - DMatrix::identity(n, n) * delta;
    if skew != 0.0 {
        let k = gaussian(n, n, std, rng);
        a += (&k - k.transpose()) * skew;
    }
    a
}

/// Gaussian matrix rescaled to spectral norm `norm`.
pub fn random_with_norm(n: usize, norm: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = gaussian(n, n, 1.0, rng);
    let s = spectral_norm_svd(&g);
    g * (norm / s)
}

/// Random symmetric positive semidefinite matrix with spectral norm `norm`.
pub fn random_psd_with_norm(n: usize, norm: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = gaussian(n, n, 1.0, rng);
    let p = g.transpose() * g;
    let s = spectral_norm_svd(&p);
    p * (norm / s)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}
