//! Envelope `‖x(t)‖ ≤ e^{-αt}‖x₀‖ + (‖B‖S∞/α)(1 - e^{-αt})` along simulated
//! trajectories with `α = min |Re λ(A_S)|`.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::reference::random_stable;
use crate::analysis::taylor::taylor_error_bound;
use crate::analysis::BoundReport;
use crate::events::{batch_flat, generate_poisson, SpikeBatch};
use crate::hippo::{gaussian, DecayParams, SaHippoKernel};
use crate::kernel::{envelope, step, KernelState, StepConfig};
use crate::linalg;
use crate::model::derive_seed;

const RELATIVE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormBoundConfig {
    pub order: usize,
    pub inputs: usize,
    pub trials: usize,
    /// Input bound `S∞`; zero gives the unforced system.
    pub s_inf: f64,
    /// `‖x₀‖`.
    pub x0_norm: f64,
    /// Horizon as a multiple of `1/α`.
    pub horizon_factor: f64,
    /// Mean number of input events per trial.
    pub events_per_trial: f64,
    /// Scale of the skew part added to the random matrices.
    pub skew: f64,
    pub terms: usize,
    pub seed: u64,
}

impl Default for NormBoundConfig {
    fn default() -> Self {
        Self {
            order: 8,
            inputs: 4,
            trials: 1000,
            s_inf: 1.0,
            x0_norm: 1.0,
            horizon_factor: 10.0,
            events_per_trial: 100.0,
            skew: 0.0,
            terms: 8,
            seed: 0,
        }
    }
}

/// Random Poisson batches rescaled so that `‖S‖ ≤ s_inf`, closed by a silent
/// batch at `horizon`.
fn bounded_inputs(cfg: &NormBoundConfig, horizon: f64, rng: &mut ChaCha8Rng, seed: u64) -> Vec<SpikeBatch> {
    let mut batches = Vec::new();
    if cfg.s_inf > 0.0 {
        let rate = cfg.events_per_trial / (cfg.inputs as f64 * horizon);
        let stream = generate_poisson(rate, horizon, cfg.inputs, seed).expect("positive rate and horizon");
        batches = batch_flat(&stream).expect("flat map stays in range");
        for b in &mut batches {
            for v in &mut b.values {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                *v *= sign * rng.random::<f64>() * cfg.s_inf;
            }
            let norm = b.norm();
            if norm > cfg.s_inf {
                b.values.iter_mut().for_each(|v| *v *= cfg.s_inf / norm);
            }
        }
    }
    if batches.last().is_none_or(|b| b.t < horizon) {
        batches.push(SpikeBatch::zeros(horizon, cfg.inputs));
    }
    batches
}

/// Steps one trajectory and checks every update against the envelope.
/// `A_S` must not depend on the interval (zero decay rates).
fn check_trajectory(
    kernel: &SaHippoKernel,
    x0: DVector<f64>,
    batches: &[SpikeBatch],
    s_inf: f64,
    step_cfg: &StepConfig,
    report: &mut BoundReport,
) {
    let a = kernel.dynamics();
    let rate = envelope::spectral_rate(a);
    let a_norm = linalg::spectral_norm(a);
    let a_frob = a.norm();
    let b_norm = linalg::spectral_norm(kernel.b());
    let x0_norm = x0.norm();
    let mut state = KernelState { x: x0, last_t: 0.0 };
    let mut taylor_slack = 0.0;
    let mut worst_taylor: f64 = 0.0;
    for batch in batches {
        let dt = batch.t - state.last_t;
        let prev = state.norm();
        state = step(kernel, &state, batch, step_cfg).expect("batches are time-ordered");
        let t = state.last_t;
        let bound = envelope::envelope(x0_norm, rate, b_norm * s_inf, t);
        if dt > 0.0 {
            // local error of each substep through the augmented generator
            // [[A h, u h / c], [0, 0]] acting on [x; c], c = ‖u‖/‖A‖
            let m = step_cfg
                .substep_radius
                .map_or(1, |r| ((a_frob * dt / r).ceil() as usize).max(1));
            let h = dt / m as f64;
            let u = (kernel.b() * DVector::from_column_slice(&batch.values)).norm();
            let c = if a_norm > 0.0 { u / a_norm } else { 0.0 };
            let r = if u > 0.0 { 2.0 * a_norm * h } else { a_norm * h };
            let x_max = prev.max(state.norm()).max(bound);
            let local = taylor_error_bound(r, step_cfg.terms) * (x_max * x_max + c * c).sqrt();
            taylor_slack += m as f64 * local;
            worst_taylor = worst_taylor.max(taylor_slack);
        }
        let measured = state.norm();
        let violated = measured > bound * (1.0 + RELATIVE_SLACK) + taylor_slack;
        report.record(measured, bound, violated);
    }
    let e = report.extras.entry("max_taylor_slack".into()).or_insert(0.0);
    *e = e.max(worst_taylor);
}

fn run_trial(cfg: &NormBoundConfig, kernel: &SaHippoKernel, trial: usize) -> BoundReport {
    let mut report = BoundReport::new("norm", serde_json::Value::Null);
    report.trials = 1;
    let a = kernel.dynamics();
    if !kernel.alpha().matrix().iter().all(|v| *v == 0.0) || linalg::spectral_abscissa(a) >= 0.0 {
        report.premise_violated = 1;
        return report;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ 0x5eed, trial as u64));
    let rate = envelope::spectral_rate(a);
    let horizon = cfg.horizon_factor / rate;
    let mut x0 = gaussian(kernel.order(), 1, 1.0, &mut rng).column(0).into_owned();
    let n = x0.norm();
    if n > 0.0 {
        x0 *= cfg.x0_norm / n;
    }
    let batches = bounded_inputs(cfg, horizon, &mut rng, derive_seed(cfg.seed, 1_000_000 + trial as u64));
    let step_cfg = StepConfig {
        terms: cfg.terms,
        ..StepConfig::default()
    };
    check_trajectory(kernel, x0, &batches, cfg.s_inf, &step_cfg, &mut report);
    report
}

/// Fresh random symmetric Hurwitz system for every trial.
pub fn verify_norm_bound(cfg: &NormBoundConfig) -> BoundReport {
    let reports: Vec<BoundReport> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, trial as u64));
            let a = random_stable(cfg.order, 0.1, cfg.skew, &mut rng);
            let b = gaussian(cfg.order, cfg.inputs, 1.0 / (cfg.order as f64).sqrt(), &mut rng);
            let c = DMatrix::identity(cfg.order, cfg.order);
            let kernel = SaHippoKernel::from_dynamics(a, DecayParams::zeros(cfg.order), b, c)
                .expect("consistent shapes");
            run_trial(cfg, &kernel, trial)
        })
        .collect();
    let mut total = BoundReport::new("norm", serde_json::to_value(cfg).unwrap_or_default());
    reports.iter().for_each(|r| total.merge(r));
    total
}

/// Same check for a fixed kernel; only the inputs and `x₀` vary.
pub fn verify_kernel_norm_bound(kernel: &SaHippoKernel, cfg: &NormBoundConfig) -> BoundReport {
    let cfg = NormBoundConfig {
        order: kernel.order(),
        inputs: kernel.input_dim(),
        ..cfg.clone()
    };
    let reports: Vec<BoundReport> = (0..cfg.trials).into_par_iter().map(|t| run_trial(&cfg, kernel, t)).collect();
    let mut total = BoundReport::new("norm", serde_json::to_value(&cfg).unwrap_or_default());
    reports.iter().for_each(|r| total.merge(r));
    total
}
