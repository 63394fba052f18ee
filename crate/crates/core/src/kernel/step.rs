//! Asynchronous state update `x' = e^{A_S Δt} x + φ(A_S, Δt) B S`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FlamesError, Result};
use crate::events::SpikeBatch;
use crate::hippo::{adaptive_matrix, SaHippoKernel};
use crate::kernel::expm::{self, DEFAULT_TERMS};

#[derive(Debug, Clone, PartialEq)]
pub struct KernelState {
    pub x: DVector<f64>,
    pub last_t: f64,
}

impl KernelState {
    pub fn zeros(order: usize, t0: f64) -> Self {
        Self {
            x: DVector::zeros(order),
            last_t: t0,
        }
    }

    pub fn norm(&self) -> f64 {
        self.x.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    /// Taylor order `n`.
    pub terms: usize,
    /// Split the interval so each piece has `‖A_S h‖_F ≤ radius`. `None`
    /// applies the series once over the whole interval.
    pub substep_radius: Option<f64>,
    /// Upper clamp on `Δt` before exponentiation. `None` disables it.
    pub max_dt: Option<f64>,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            terms: DEFAULT_TERMS,
            substep_radius: Some(0.5),
            max_dt: None,
        }
    }
}

impl StepConfig {
    /// Single application of the series, no substeps and no clamp.
    pub fn plain(terms: usize) -> Self {
        Self {
            terms,
            substep_radius: None,
            max_dt: None,
        }
    }

    /// Default settings with the clamp `10/α₀` (none when `α₀ = 0`).
    pub fn for_alpha0(alpha0: f64) -> Self {
        Self {
            max_dt: (alpha0 > 0.0).then(|| 10.0 / alpha0),
            ..Self::default()
        }
    }

    fn effective_dt(&self, dt: f64) -> f64 {
        match self.max_dt {
            Some(cap) if dt > cap => cap,
            _ => dt,
        }
    }

    fn substeps(&self, a: &DMatrix<f64>, dt: f64) -> usize {
        match self.substep_radius {
            Some(r) if r > 0.0 => ((a.norm() * dt / r).ceil() as usize).max(1),
            _ => 1,
        }
    }
}

/// `w = x; for k = n..1: w = x + (h/k)(A w + u)`, which equals
/// `E_n(Ah) x + Φ_n(A, h) u` without forming either matrix.
fn horner_apply(a: &DMatrix<f64>, h: f64, terms: usize, x: &DVector<f64>, u: Option<&DVector<f64>>) -> DVector<f64> {
    let mut w = x.clone();
    let mut aw = DVector::zeros(x.len());
    for k in (1..=terms).rev() {
        aw.gemv(1.0, a, &w, 0.0);
        if let Some(u) = u {
            aw += u;
        }
        w.copy_from(x);
        w.axpy(h / k as f64, &aw, 1.0);
    }
    w
}

fn check_order(state: &KernelState, kernel: &SaHippoKernel, batch: &SpikeBatch) -> Result<()> {
    if batch.t < state.last_t || !batch.t.is_finite() {
        return Err(FlamesError::TemporalOrder {
            last: state.last_t,
            next: batch.t,
        });
    }
    if batch.values.len() != kernel.input_dim() {
        return Err(FlamesError::invalid(
            "batch",
            format!("expected {} channels, got {}", kernel.input_dim(), batch.values.len()),
        ));
    }
    if state.x.len() != kernel.order() {
        return Err(FlamesError::invalid("state", "dimension does not match kernel order"));
    }
    Ok(())
}

fn drive(kernel: &SaHippoKernel, batch: &SpikeBatch) -> Option<DVector<f64>> {
    if batch.is_silent() {
        return None;
    }
    Some(kernel.b() * DVector::from_column_slice(&batch.values))
}

/// One update from `state.last_t` to `batch.t`. `S` is held constant over
/// the interval.
pub fn step(kernel: &SaHippoKernel, state: &KernelState, batch: &SpikeBatch, cfg: &StepConfig) -> Result<KernelState> {
    check_order(state, kernel, batch)?;
    if cfg.terms == 0 {
        return Err(FlamesError::invalid("terms", "Taylor order must be at least 1"));
    }
    let dt = cfg.effective_dt(batch.t - state.last_t);
    let u = drive(kernel, batch);
    if dt == 0.0 {
        return Ok(KernelState {
            x: state.x.clone(),
            last_t: batch.t,
        });
    }
    let a = adaptive_matrix(kernel, dt)?;
    let m = cfg.substeps(&a, dt);
    let h = dt / m as f64;
    if cfg.substep_radius.is_none() {
        expm::warn_if_outside(&a, h, expm::DEFAULT_RADIUS);
    }
    let mut x = state.x.clone();
    for _ in 0..m {
        x = horner_apply(&a, h, cfg.terms, &x, u.as_ref());
    }
    Ok(KernelState { x, last_t: batch.t })
}

/// Stateful stepper that caches the propagators for the last seen interval,
/// which pays off on regular tick grids.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    kernel: &'a SaHippoKernel,
    cfg: StepConfig,
    cached: Option<(u64, usize, DMatrix<f64>, DMatrix<f64>)>,
}

impl<'a> Stepper<'a> {
    pub fn new(kernel: &'a SaHippoKernel, cfg: StepConfig) -> Self {
        Self {
            kernel,
            cfg,
            cached: None,
        }
    }

    pub fn kernel(&self) -> &SaHippoKernel {
        self.kernel
    }

    /// The effective `A_S` for an interval (after clamping).
    pub fn matrix_for(&self, dt: f64) -> Result<DMatrix<f64>> {
        adaptive_matrix(self.kernel, self.cfg.effective_dt(dt))
    }

    pub fn step(&mut self, state: &mut KernelState, batch: &SpikeBatch) -> Result<()> {
        check_order(state, self.kernel, batch)?;
        let dt = self.cfg.effective_dt(batch.t - state.last_t);
        state.last_t = batch.t;
        if dt == 0.0 {
            return Ok(());
        }
        let key = dt.to_bits();
        if self.cached.as_ref().map(|c| c.0) != Some(key) {
            let a = adaptive_matrix(self.kernel, dt)?;
            let m = self.cfg.substeps(&a, dt);
            let (e, phi) = expm::expm_phi(&a, dt / m as f64, self.cfg.terms)?;
            self.cached = Some((key, m, e, phi * self.kernel.b()));
        }
        let (_, m, e, phib) = self.cached.as_ref().expect("cache filled above");
        let u = (!batch.is_silent()).then(|| DVector::from_column_slice(&batch.values));
        let mut next = DVector::zeros(state.x.len());
        for _ in 0..*m {
            next.gemv(1.0, e, &state.x, 0.0);
            if let Some(u) = &u {
                next.gemv(1.0, phib, u, 1.0);
            }
            std::mem::swap(&mut state.x, &mut next);
        }
        Ok(())
    }
}

/// `y = C x`.
pub fn readout(kernel: &SaHippoKernel, state: &KernelState) -> DVector<f64> {
    kernel.c() * &state.x
}

/// `1` where `y > v_th`, else `0`.
pub fn threshold_spikes(y: &[f64], v_th: f64) -> Vec<u8> {
    y.iter().map(|v| u8::from(*v > v_th)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hippo::{hippo_legs, DecayParams, SignConvention};

    fn scalar_kernel() -> SaHippoKernel {
        SaHippoKernel::from_dynamics(
            DMatrix::from_element(1, 1, -1.0),
            DecayParams::zeros(1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn scalar_ode_closed_form() {
        let k = scalar_kernel();
        let s0 = KernelState::zeros(1, 0.0);
        let b = SpikeBatch::new(1.0, vec![1.0]);
        let exact = 1.0 - (-1.0f64).exp();
        let plain = step(&k, &s0, &b, &StepConfig::plain(8)).unwrap();
        assert!((plain.x[0] - exact).abs() < 1.0 / 362880.0 * 2.0);
        let sub = step(&k, &s0, &b, &StepConfig::default()).unwrap();
        assert!((sub.x[0] - exact).abs() < 1e-7);
        assert_eq!(sub.last_t, 1.0);
    }

    #[test]
    fn zero_interval_keeps_state() {
        let k = scalar_kernel();
        let s = KernelState {
            x: DVector::from_element(1, 0.3),
            last_t: 2.0,
        };
        let out = step(&k, &s, &SpikeBatch::new(2.0, vec![5.0]), &StepConfig::default()).unwrap();
        assert_eq!(out.x, s.x);
    }

    #[test]
    fn temporal_order_enforced() {
        let k = scalar_kernel();
        let s = KernelState::zeros(1, 1.0);
        let err = step(&k, &s, &SpikeBatch::new(0.5, vec![0.0]), &StepConfig::default()).unwrap_err();
        assert!(matches!(err, FlamesError::TemporalOrder { .. }));
    }

    #[test]
    fn horner_matches_matrix_form() {
        let a = DMatrix::from_fn(5, 5, |i, j| ((i * 7 + j * 2) % 5) as f64 * 0.1 - 0.25);
        let x = DVector::from_fn(5, |i, _| i as f64 - 1.5);
        let u = DVector::from_fn(5, |i, _| 0.3 * i as f64);
        let (e, phi) = expm::expm_phi(&a, 0.4, 8).unwrap();
        let want = &e * &x + &phi * &u;
        let got = horner_apply(&a, 0.4, 8, &x, Some(&u));
        assert!((want - got).norm() < 1e-13);
    }

    #[test]
    fn stepper_agrees_with_step() {
        let mut p = crate::hippo::KernelParams::new(6, 2, 1);
        p.sign_convention = SignConvention::Diagonal;
        let k = SaHippoKernel::from_params(&p).unwrap();
        let cfg = StepConfig::for_alpha0(1.0);
        let mut s1 = KernelState::zeros(6, 0.0);
        let mut s2 = s1.clone();
        let mut stepper = Stepper::new(&k, cfg);
        for i in 1..30 {
            let t = i as f64 * 0.01 + (i % 3) as f64 * 0.002;
            let b = SpikeBatch::new(t, vec![(i % 2) as f64, 1.0 - (i % 5) as f64 * 0.3]);
            s1 = step(&k, &s1, &b, &cfg).unwrap();
            stepper.step(&mut s2, &b).unwrap();
        }
        assert!((&s1.x - &s2.x).norm() < 1e-10 * (1.0 + s1.x.norm()));
    }

    #[test]
    fn pure_decay_contracts_for_legs() {
        let k = SaHippoKernel::new(
            hippo_legs(8).unwrap(),
            DecayParams::zeros(8),
            DMatrix::zeros(8, 1),
            DMatrix::zeros(1, 8),
            -1.0,
            SignConvention::Diagonal,
        )
        .unwrap();
        let s = KernelState {
            x: DVector::from_fn(8, |i, _| (i as f64 * 0.7).sin()),
            last_t: 0.0,
        };
        let out = step(&k, &s, &SpikeBatch::zeros(0.3, 1), &StepConfig::default()).unwrap();
        assert!(out.norm() <= s.norm());
    }

    #[test]
    fn readout_and_threshold() {
        let k = SaHippoKernel::from_dynamics(
            -DMatrix::identity(2, 2),
            DecayParams::zeros(2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let s = KernelState {
            x: DVector::from_vec(vec![0.5, 1.5]),
            last_t: 0.0,
        };
        assert_eq!(readout(&k, &s).as_slice(), &[0.5, 1.5]);
        assert_eq!(threshold_spikes(&[0.5, 1.5], 1.0), vec![0, 1]);
        assert_eq!(threshold_spikes(&[1.0], 1.0), vec![0]);
        assert_eq!(threshold_spikes(&[-3.0, 7.0], -1e300), vec![1, 1]);
    }
}
