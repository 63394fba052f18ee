//! Executable checks of the stability, error and complexity bounds.

pub mod bench;
pub mod lyapunov;
pub mod norm_bound;
pub mod recall;
pub mod reference;
pub mod taylor;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use bench::{bench_complexity, BenchConfig, BenchRow};
pub use lyapunov::{solve_lyapunov, verify_lyapunov, verify_ultimate_bound, LyapunovCertificate, UltimateConfig};
pub use norm_bound::{verify_kernel_norm_bound, verify_norm_bound, NormBoundConfig};
pub use recall::{delayed_recall_experiment, RecallConfig, RecallRow};
pub use taylor::{taylor_error_bound, verify_taylor_bound, TaylorConfig};

/// Outcome of one verification suite. `violations` counts every sample
/// that exceeded its bound beyond the documented tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub trials: usize,
    pub samples: usize,
    pub violations: usize,
    /// Largest `measured / bound` over all samples.
    pub max_slack: f64,
    /// Trials skipped because the bound's hypotheses did not hold.
    pub premise_violated: usize,
    pub config: serde_json::Value,
    #[serde(default)]
    pub extras: BTreeMap<String, f64>,
}

impl BoundReport {
    pub fn new(name: &str, config: serde_json::Value) -> Self {
        Self {
            name: name.to_string(),
            trials: 0,
            samples: 0,
            violations: 0,
            max_slack: 0.0,
            premise_violated: 0,
            config,
            extras: BTreeMap::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub(crate) fn record(&mut self, measured: f64, bound: f64, violated: bool) {
        self.samples += 1;
        if violated {
            self.violations += 1;
        }
        let ratio = if bound > 0.0 {
            measured / bound
        } else if measured > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        if ratio > self.max_slack {
            self.max_slack = ratio;
        }
    }

    pub(crate) fn merge(&mut self, other: &BoundReport) {
        self.trials += other.trials;
        self.samples += other.samples;
        self.violations += other.violations;
        self.premise_violated += other.premise_violated;
        self.max_slack = self.max_slack.max(other.max_slack);
        for (k, v) in &other.extras {
            let e = self.extras.entry(k.clone()).or_insert(f64::NEG_INFINITY);
            *e = e.max(*v);
        }
    }
}
