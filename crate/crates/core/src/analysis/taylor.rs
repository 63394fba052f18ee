//! Truncation error of the Taylor exponential against
//! `‖M dt‖^{n+1}/(n+1)!·e^{‖M dt‖}`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::reference::{expm_reference, random_psd_with_norm, random_with_norm, spectral_norm_svd, uniform};
use crate::analysis::BoundReport;
use crate::kernel::expm_taylor;
use crate::model::derive_seed;

/// `r^{n+1}/(n+1)!·e^r`.
pub fn taylor_error_bound(r: f64, order: usize) -> f64 {
    let mut term = 1.0;
    for k in 1..=order + 1 {
        term *= r / k as f64;
    }
    term * r.exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorConfig {
    pub dim: usize,
    pub trials: usize,
    pub orders: Vec<usize>,
    pub min_norm: f64,
    pub max_norm: f64,
    pub seed: u64,
    /// Test hook: compute order `n` but compare against the bound for
    /// `n + shift`. Zero in normal use.
    #[serde(default)]
    pub order_shift: usize,
}

impl Default for TaylorConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            trials: 500,
            orders: (1..=10).collect(),
            min_norm: 0.25,
            max_norm: 2.0,
            seed: 0,
            order_shift: 0,
        }
    }
}

pub fn verify_taylor_bound(cfg: &TaylorConfig) -> BoundReport {
    let config = serde_json::to_value(cfg).unwrap_or_default();
    let reports: Vec<BoundReport> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, trial as u64));
            let r = uniform(&mut rng, cfg.min_norm, cfg.max_norm);
            let dt = uniform(&mut rng, 0.1, 1.0);
            // every fourth trial is symmetric PSD, the slowest-converging case
            let scaled = if trial % 4 == 3 {
                random_psd_with_norm(cfg.dim, r, &mut rng)
            } else {
                random_with_norm(cfg.dim, r, &mut rng)
            };
            let m = scaled / dt;
            let arg = spectral_norm_svd(&(&m * dt));
            let reference = expm_reference(&(&m * dt));
            let floor = 64.0 * f64::EPSILON * spectral_norm_svd(&reference);
            let mut report = BoundReport::new("taylor", serde_json::Value::Null);
            report.trials = 1;
            for &n in &cfg.orders {
                let approx = expm_taylor(&m, dt, n).expect("validated arguments");
                let err = spectral_norm_svd(&(&reference - approx));
                let bound = taylor_error_bound(arg, n + cfg.order_shift);
                report.record(err, bound, err > bound * (1.0 + 1e-9) + floor);
            }
            report
        })
        .collect();
    let mut total = BoundReport::new("taylor", config);
    for r in &reports {
        total.merge(r);
    }
    total
}
