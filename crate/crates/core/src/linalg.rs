//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{Complex, DMatrix, DVector};

pub type C64 = Complex<f64>;

const POWER_ITERATIONS: usize = 100;
const POWER_TOLERANCE: f64 = 1e-10;

/// Spectral norm by power iteration on `MᵀM` (100 iterations, relative
/// tolerance 1e-10). Never overestimates the true norm.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let n = m.ncols();
    if n == 0 || m.nrows() == 0 {
        return 0.0;
    }
    // deterministic, non-symmetric start so it is unlikely to be orthogonal
    // to the top singular vector
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64 + 0.01 * (i * i) as f64);
    v /= v.norm();
    let mut sigma = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let w = m * &v;
        let z = m.transpose() * &w;
        let zn = z.norm();
        if zn == 0.0 {
            return 0.0;
        }
        let next = w.norm();
        v = z / zn;
        if (next - sigma).abs() <= POWER_TOLERANCE * next {
            sigma = next;
            break;
        }
        sigma = next;
    }
    (m * &v).norm().max(sigma)
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<C64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

/// Largest real part over the spectrum (the spectral abscissa).
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m)
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `min_i |Re λ_i|`, the slowest decay rate of a Hurwitz matrix.
pub fn slowest_decay(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m)
        .iter()
        .map(|z| z.re.abs())
        .fold(f64::INFINITY, f64::min)
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|v| C64::new(v, 0.0))
}

pub fn is_normal(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    let mt = m.transpose();
    let comm = m * &mt - &mt * m;
    let scale = m.norm().powi(2).max(f64::MIN_POSITIVE);
    comm.norm() <= rel_tol * scale
}
