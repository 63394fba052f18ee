//! Truncated Taylor series for `e^{M dt}` and the φ-function
//! `M⁻¹(e^{M dt} - I)`, both evaluated without inverting `M`.

use nalgebra::DMatrix;

use crate::error::{FlamesError, Result};
use crate::linalg;

pub const DEFAULT_TERMS: usize = 8;
/// Above this `‖M dt‖` the truncated series is flagged as inaccurate.
pub const DEFAULT_RADIUS: f64 = 2.0;

fn check(m: &DMatrix<f64>, dt: f64, terms: usize) -> Result<()> {
    if !m.is_square() {
        return Err(FlamesError::invalid("M", "matrix must be square"));
    }
    if terms == 0 {
        return Err(FlamesError::invalid("terms", "Taylor order must be at least 1"));
    }
    if !(dt >= 0.0) || dt.is_infinite() {
        return Err(FlamesError::invalid("dt", format!("interval {dt} must be finite and >= 0")));
    }
    Ok(())
}

/// Logs a warning when `‖M dt‖₂ > radius`. The Frobenius norm is tried first
/// since it bounds the spectral norm from above.
pub fn warn_if_outside(m: &DMatrix<f64>, dt: f64, radius: f64) -> bool {
    if m.norm() * dt <= radius {
        return false;
    }
    let r = linalg::spectral_norm(m) * dt;
    if r > radius {
        log::warn!("Taylor argument norm {r:.3} exceeds radius {radius}; accuracy degraded");
        true
    } else {
        false
    }
}

/// `Q = Σ_{k=0}^{n-1} X^k/(k+1)!` with `X = M dt`, by Horner.
fn phi_core(m: &DMatrix<f64>, dt: f64, terms: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let x = m * dt;
    let mut q = DMatrix::identity(n, n);
    for k in (1..terms).rev() {
        q = &x * q / (k + 1) as f64;
        for i in 0..n {
            q[(i, i)] += 1.0;
        }
    }
    q
}

/// `Σ_{k=0}^{n} (M dt)^k / k!`.
pub fn expm_taylor(m: &DMatrix<f64>, dt: f64, terms: usize) -> Result<DMatrix<f64>> {
    Ok(expm_phi(m, dt, terms)?.0)
}

/// `dt·I + M dt²/2! + … + M^{n-1} dt^n/n!`.
pub fn phi_matrix(m: &DMatrix<f64>, dt: f64, terms: usize) -> Result<DMatrix<f64>> {
    check(m, dt, terms)?;
    Ok(phi_core(m, dt, terms) * dt)
}

/// Both series from one Horner pass, using `e = I + M·φ`.
pub fn expm_phi(m: &DMatrix<f64>, dt: f64, terms: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check(m, dt, terms)?;
    warn_if_outside(m, dt, DEFAULT_RADIUS);
    let q = phi_core(m, dt, terms);
    let mut e = m * &q * dt;
    for i in 0..m.nrows() {
        e[(i, i)] += 1.0;
    }
    Ok((e, q * dt))
}
