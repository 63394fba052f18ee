//! Continuous Lyapunov equation `AᵀP + PA = -Q` and the sign of
//! `V̇ = -xᵀQx + 2xᵀPBS` along driven trajectories.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::reference::{random_stable, spectral_norm_svd, uniform};
use crate::analysis::BoundReport;
use crate::error::{FlamesError, Result};
use crate::events::{batch_flat, generate_poisson, SpikeBatch};
use crate::hippo::{gaussian, DecayParams, SaHippoKernel, StabilityReport};
use crate::kernel::{envelope, step, KernelState, StepConfig};
use crate::model::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCertificate {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// `‖AᵀP + PA + Q‖_F`.
    pub residual: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<LyapunovCertificate> {
    let n = a.nrows();
    if !a.is_square() || n == 0 {
        return Err(FlamesError::invalid("A_S", "matrix must be square and non-empty"));
    }
    if q.shape() != (n, n) {
        return Err(FlamesError::invalid("Q", format!("expected {n}x{n}")));
    }
    if (q - q.transpose()).norm() > 1e-12 * q.norm().max(1.0) || q.clone().cholesky().is_none() {
        return Err(FlamesError::invalid("Q", "must be symmetric positive definite"));
    }
    let stability = StabilityReport::of(a);
    if !stability.is_hurwitz() {
        return Err(FlamesError::NotHurwitz {
            max_real: stability.max_real_part,
        });
    }
    // column-major vec: vec(AᵀP) = (I ⊗ Aᵀ) vec P, vec(PA) = (Aᵀ ⊗ I) vec P
    let n2 = n * n;
    let mut system = DMatrix::<f64>::zeros(n2, n2);
    for j in 0..n {
        for i in 0..n {
            let row = i + j * n;
            for k in 0..n {
                system[(row, k + j * n)] += a[(k, i)];
                system[(row, i + k * n)] += a[(k, j)];
            }
        }
    }
    let rhs = DVector::from_iterator(n2, q.iter().map(|v| -v));
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| FlamesError::Singular("Lyapunov system has no unique solution".into()))?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    let p = (&p + p.transpose()) * 0.5;
    let residual = (a.transpose() * &p + &p * a + q).norm();
    let eig = p.clone().symmetric_eigenvalues();
    let min_eigenvalue = eig.min();
    if !(min_eigenvalue > 0.0) {
        return Err(FlamesError::Singular(format!(
            "Lyapunov solution is not positive definite (min eigenvalue {min_eigenvalue:e})"
        )));
    }
    Ok(LyapunovCertificate {
        p,
        q: q.clone(),
        residual,
        min_eigenvalue,
        max_eigenvalue: eig.max(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UltimateConfig {
    pub trials: usize,
    /// Orders cycle through `2..=max_order`.
    pub max_order: usize,
    pub inputs: usize,
    pub s_inf: f64,
    pub horizon_factor: f64,
    pub events_per_trial: f64,
    /// Extra sample points per input interval (same held input).
    pub samples_per_interval: usize,
    /// Relative slack on the ball radius for the entry/exit report.
    pub ball_slack: f64,
    pub seed: u64,
}

impl Default for UltimateConfig {
    fn default() -> Self {
        Self {
            trials: 200,
            max_order: 16,
            inputs: 2,
            s_inf: 1.0,
            horizon_factor: 10.0,
            events_per_trial: 100.0,
            samples_per_interval: 4,
            ball_slack: 0.05,
            seed: 0,
        }
    }
}

/// Random stable system for trial `trial`: `(A, B, Q)`. Odd trials add a
/// skew part and a non-identity `Q`.
pub fn random_system(cfg: &UltimateConfig, trial: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, trial as u64));
    let n = 2 + trial % (cfg.max_order.max(2) - 1);
    let skew = if trial % 2 == 1 { 1.0 } else { 0.0 };
    let a = random_stable(n, 0.1, skew, &mut rng);
    let b = gaussian(n, cfg.inputs, 1.0 / (n as f64).sqrt(), &mut rng);
    let q = if trial % 2 == 1 {
        let g = gaussian(n, n, 1.0 / (n as f64).sqrt(), &mut rng);
        g.transpose() * g + DMatrix::identity(n, n) * 0.5
    } else {
        DMatrix::identity(n, n)
    };
    (a, b, q)
}

/// Lyapunov solves on the random systems: residual `≤ 1e-8‖Q‖_F` and
/// `P ≻ 0`.
pub fn verify_lyapunov(cfg: &UltimateConfig) -> BoundReport {
    let mut report = BoundReport::new("lyapunov", serde_json::to_value(cfg).unwrap_or_default());
    let mut worst_min_eig = f64::INFINITY;
    for trial in 0..cfg.trials {
        let (a, _, q) = random_system(cfg, trial);
        report.trials += 1;
        let tol = 1e-8 * q.norm();
        match solve_lyapunov(&a, &q) {
            Ok(cert) => {
                worst_min_eig = worst_min_eig.min(cert.min_eigenvalue);
                report.record(cert.residual, tol, cert.residual > tol);
            }
            Err(_) => report.record(f64::INFINITY, tol, true),
        }
    }
    report.extras.insert("min_eigenvalue_p".into(), worst_min_eig);
    report
}

#[derive(Debug, Default, Clone, Copy)]
struct SignTally {
    samples: usize,
    outside_c: usize,
    literal: usize,
    outside_2c: usize,
    corrected: usize,
    ball_exits: usize,
    worst: f64,
}

fn simulate(cfg: &UltimateConfig, trial: usize) -> Result<(SignTally, f64)> {
    let (a, b, q) = random_system(cfg, trial);
    let n = a.nrows();
    let cert = solve_lyapunov(&a, &q)?;
    let lambda_q = q.clone().symmetric_eigenvalues().min();
    let pb = &cert.p * &b;
    let gamma = 2.0 * spectral_norm_svd(&pb) * cfg.s_inf;
    let radius = gamma / (2.0 * lambda_q);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ 0x11, trial as u64));
    let rate = envelope::spectral_rate(&a);
    let horizon = cfg.horizon_factor / rate;
    let events_rate = cfg.events_per_trial / (cfg.inputs as f64 * horizon);
    let stream = generate_poisson(events_rate, horizon, cfg.inputs, derive_seed(cfg.seed, 7_000_000 + trial as u64))?;
    let mut batches = batch_flat(&stream)?;
    for bt in &mut batches {
        for v in &mut bt.values {
            *v *= uniform(&mut rng, -1.0, 1.0) * cfg.s_inf;
        }
        let norm = bt.norm();
        if norm > cfg.s_inf {
            bt.values.iter_mut().for_each(|v| *v *= cfg.s_inf / norm);
        }
    }
    batches.push(SpikeBatch::zeros(horizon, cfg.inputs));
    let kernel = SaHippoKernel::from_dynamics(a, DecayParams::zeros(n), b, DMatrix::identity(n, n))?;
    let mut x0 = gaussian(n, 1, 1.0, &mut rng).column(0).into_owned();
    let x0n = x0.norm();
    x0 *= uniform(&mut rng, 0.0, 3.0) * radius / x0n;
    let mut state = KernelState { x: x0, last_t: 0.0 };
    let step_cfg = StepConfig::default();
    let mut tally = SignTally::default();
    let mut inside = false;
    let vdot = |x: &DVector<f64>, s: &[f64]| -> f64 {
        let drive = &pb * DVector::from_column_slice(s);
        -x.dot(&(&q * x)) + 2.0 * x.dot(&drive)
    };
    let mut check = |x: &DVector<f64>, s: &[f64], tally: &mut SignTally| {
        let xn = x.norm();
        let v = vdot(x, s);
        tally.samples += 1;
        if xn > radius {
            tally.outside_c += 1;
            if v >= 0.0 {
                tally.literal += 1;
                tally.worst = tally.worst.max(xn / radius);
            }
        }
        if xn > 2.0 * radius {
            tally.outside_2c += 1;
            if v >= 0.0 {
                tally.corrected += 1;
            }
        }
        let within = xn <= radius * (1.0 + cfg.ball_slack);
        if inside && !within {
            tally.ball_exits += 1;
        }
        inside |= within;
    };
    let parts = cfg.samples_per_interval.max(1);
    for batch in &batches {
        let t0 = state.last_t;
        let dt = batch.t - t0;
        // right limit at the start of the interval, then samples inside it
        check(&state.x, &batch.values, &mut tally);
        for j in 1..=parts {
            let t = if j == parts { batch.t } else { t0 + dt * j as f64 / parts as f64 };
            state = step(&kernel, &state, &SpikeBatch::new(t, batch.values.clone()), &step_cfg)?;
            check(&state.x, &batch.values, &mut tally);
        }
    }
    Ok((tally, radius))
}

/// `V̇ < 0` wherever `‖x‖ > C` with `C = γ/(2λ_min(Q))`, `γ = 2‖PB‖S∞`.
/// Every sample with `‖x‖ > C` and `V̇ ≥ 0` is a violation. The extras also
/// report the same test at radius `2C` and exits from the `C` ball after
/// first entry.
pub fn verify_ultimate_bound(cfg: &UltimateConfig) -> BoundReport {
    let results: Vec<Result<(SignTally, f64)>> = (0..cfg.trials).into_par_iter().map(|t| simulate(cfg, t)).collect();
    let mut report = BoundReport::new("ultimate", serde_json::to_value(cfg).unwrap_or_default());
    let mut total = SignTally::default();
    for r in results {
        report.trials += 1;
        match r {
            Ok((tally, _)) => {
                total.samples += tally.samples;
                total.outside_c += tally.outside_c;
                total.literal += tally.literal;
                total.outside_2c += tally.outside_2c;
                total.corrected += tally.corrected;
                total.ball_exits += tally.ball_exits;
                total.worst = total.worst.max(tally.worst);
            }
            Err(_) => report.premise_violated += 1,
        }
    }
    report.samples = total.samples;
    report.violations = total.literal;
    report.max_slack = total.worst;
    report.extras.insert("samples_outside_c".into(), total.outside_c as f64);
    report.extras.insert("samples_outside_2c".into(), total.outside_2c as f64);
    report.extras.insert("violations_at_2c".into(), total.corrected as f64);
    report.extras.insert("ball_exits".into(), total.ball_exits as f64);
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_cases() {
        let a = -DMatrix::<f64>::identity(3, 3);
        let c = solve_lyapunov(&a, &(DMatrix::identity(3, 3) * 2.0)).unwrap();
        assert_eq!(c.p, DMatrix::identity(3, 3));
        let c = solve_lyapunov(&a, &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(c.p, DMatrix::identity(3, 3) * 0.5);
    }

    #[test]
    fn random_stable_six() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random_stable(6, 0.1, 1.0, &mut rng);
        let q = DMatrix::identity(6, 6);
        let c = solve_lyapunov(&a, &q).unwrap();
        assert!(c.residual <= 1e-8 * q.norm());
        assert!(c.min_eigenvalue > 0.0);
        assert!((&c.p - c.p.transpose()).norm() <= 1e-10);
    }

    #[test]
    fn non_hurwitz_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, -1.0]);
        let err = solve_lyapunov(&a, &DMatrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, FlamesError::NotHurwitz { .. }));
        assert!(solve_lyapunov(&-DMatrix::identity(2, 2), &-DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn scalar_vdot_changes_sign_at_twice_the_radius() {
        // A = -1, B = 1, Q = 1 gives P = 1/2, γ = 1, C = 1/2
        let c = solve_lyapunov(&DMatrix::from_element(1, 1, -1.0), &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(c.p[(0, 0)], 0.5);
        let vdot = |x: f64| -x * x + 2.0 * x * c.p[(0, 0)];
        assert!(vdot(0.75) > 0.0);
        assert!(vdot(1.0 + 1e-9) < 0.0);
    }

    #[test]
    fn lyapunov_suite_small() {
        let r = verify_lyapunov(&UltimateConfig {
            trials: 15,
            ..Default::default()
        });
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn corrected_radius_never_violated() {
        let r = verify_ultimate_bound(&UltimateConfig {
            trials: 15,
            ..Default::default()
        });
        assert_eq!(r.premise_violated, 0);
        assert_eq!(r.extras["violations_at_2c"], 0.0);
    }
}
