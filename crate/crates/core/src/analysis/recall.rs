//! Two-class delayed-recall task: the class cue arrives `delay` ticks before
//! the readout, with random distractor spikes in between.

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FlamesError, Result};
use crate::events::SpikeBatch;
use crate::hippo::{gaussian, hippo_legs, DecayParams, SaHippoKernel, SignConvention};
use crate::kernel::{KernelState, StepConfig, Stepper};
use crate::model::derive_seed;
use crate::model::readout::event_pool;
use crate::model::ridge::{accuracy, train_ridge_readout};

const CHANNELS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecallConfig {
    /// Kernel state size; also the number of baseline LIF neurons.
    pub order: usize,
    /// Tick length in seconds.
    pub tick: f64,
    /// Seconds per unit of kernel time.
    pub time_scale: f64,
    /// Uniform decay rate of the kernel, per unit of kernel time.
    pub alpha0: f64,
    /// Membrane time constant of the baseline, seconds.
    pub lif_tau: f64,
    pub lif_threshold: f64,
    /// Per-tick, per-channel spike probability after the cue.
    pub distractor_rate: f64,
    /// Number of trailing states averaged into the feature.
    pub pool_factor: usize,
    pub ridge_lambda: f64,
    /// Fraction of trials used for training; the rest are test.
    pub train_fraction: f64,
}

impl Default for RecallConfig {
    fn default() -> Self {
        Self {
            order: 32,
            tick: 1e-3,
            time_scale: 0.05,
            alpha0: 0.0,
            lif_tau: 0.02,
            lif_threshold: 1.0,
            distractor_rate: 0.1,
            pool_factor: 1,
            ridge_lambda: 1e-2,
            train_fraction: 0.5,
        }
    }
}

impl RecallConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tick", self.tick),
            ("time_scale", self.time_scale),
            ("lif_tau", self.lif_tau),
            ("lif_threshold", self.lif_threshold),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FlamesError::invalid(field, "must be positive and finite"));
            }
        }
        if self.order == 0 {
            return Err(FlamesError::invalid("order", "must be at least 1"));
        }
        if !(self.alpha0 >= 0.0 && self.alpha0.is_finite()) {
            return Err(FlamesError::invalid("alpha0", "must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(FlamesError::invalid("distractor_rate", "must lie in [0, 1]"));
        }
        if self.pool_factor == 0 {
            return Err(FlamesError::invalid("pool_factor", "must be at least 1"));
        }
        if !(self.ridge_lambda > 0.0) {
            return Err(FlamesError::invalid("ridge_lambda", "must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(FlamesError::invalid("train_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub delay: usize,
    pub flames_accuracy: f64,
    pub lif_accuracy: f64,
    /// Test accuracy when every label is an independent coin flip.
    pub flames_control: f64,
    pub lif_control: f64,
}

struct Trial {
    label: usize,
    /// One batch per tick, ticks `0..=delay`.
    ticks: Vec<[f64; CHANNELS]>,
}

fn make_trial(delay: usize, rate: f64, rng: &mut ChaCha8Rng) -> Trial {
    let label = usize::from(rng.random::<bool>());
    let mut ticks = vec![[0.0; CHANNELS]; delay + 1];
    ticks[0][label] = 1.0;
    for tick in ticks.iter_mut().skip(1) {
        for v in tick.iter_mut() {
            if rng.random::<f64>() < rate {
                *v = 1.0;
            }
        }
    }
    Trial { label, ticks }
}

fn tail_feature(states: &[Vec<f64>], p: usize) -> Result<Vec<f64>> {
    let start = states.len().saturating_sub(p);
    Ok(event_pool(&states[start..], p)?.pop().unwrap_or_default())
}

fn flames_features(kernel: &SaHippoKernel, cfg: &RecallConfig, trial: &Trial) -> Result<Vec<f64>> {
    let h = cfg.tick / cfg.time_scale;
    let mut stepper = Stepper::new(kernel, StepConfig::for_alpha0(cfg.alpha0));
    let mut state = KernelState::zeros(kernel.order(), -h);
    let mut states = Vec::with_capacity(trial.ticks.len());
    for (k, s) in trial.ticks.iter().enumerate() {
        stepper.step(&mut state, &SpikeBatch::new(k as f64 * h, s.to_vec()))?;
        states.push(state.x.as_slice().to_vec());
    }
    tail_feature(&states, cfg.pool_factor)
}

/// Leaky integrate-and-fire membranes sharing one time constant, driven by
/// the same input projection as the kernel; the feature is the membrane
/// potential.
fn lif_features(weights: &DMatrix<f64>, cfg: &RecallConfig, trial: &Trial) -> Result<Vec<f64>> {
    let beta = (-cfg.tick / cfg.lif_tau).exp();
    let mut v = vec![0.0; weights.nrows()];
    let mut states = Vec::with_capacity(trial.ticks.len());
    for s in &trial.ticks {
        for (i, vi) in v.iter_mut().enumerate() {
            let drive: f64 = (0..CHANNELS).map(|c| weights[(i, c)] * s[c]).sum();
            *vi = beta * *vi + drive;
            if *vi > cfg.lif_threshold {
                *vi = 0.0;
            }
        }
        states.push(v.clone());
    }
    tail_feature(&states, cfg.pool_factor)
}

/// Z-scores every column with statistics from the training rows.
fn standardize(train: &mut [Vec<f64>], test: &mut [Vec<f64>]) {
    let d = train.first().map_or(0, Vec::len);
    let n = train.len() as f64;
    for j in 0..d {
        let mean = train.iter().map(|f| f[j]).sum::<f64>() / n;
        let var = train.iter().map(|f| (f[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for f in train.iter_mut().chain(test.iter_mut()) {
            f[j] = (f[j] - mean) / sd;
        }
    }
}

fn fit_and_score(
    mut train: Vec<Vec<f64>>,
    mut test: Vec<Vec<f64>>,
    train_labels: &[usize],
    test_labels: &[usize],
    lambda: f64,
) -> Result<f64> {
    standardize(&mut train, &mut test);
    let head = train_ridge_readout(&train, train_labels, lambda)?;
    Ok(accuracy(&head, &test, test_labels))
}

fn both_classes(labels: &[usize]) -> bool {
    labels.contains(&0) && labels.contains(&1)
}

/// Test accuracy of ridge readouts on kernel states and on baseline LIF
/// membranes, one row per delay.
pub fn delayed_recall_experiment(
    cfg: &RecallConfig,
    delay_steps: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<RecallRow>> {
    cfg.validate()?;
    let n_train = (trials as f64 * cfg.train_fraction).round() as usize;
    if n_train < 2 || trials - n_train < 1 {
        return Err(FlamesError::invalid("trials", "too few trials for a train/test split"));
    }
    let n = cfg.order;
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let b = gaussian(n, CHANNELS, 1.0 / (n as f64).sqrt(), &mut init_rng);
    let kernel = SaHippoKernel::new(
        hippo_legs(n)?,
        DecayParams::uniform(n, cfg.alpha0)?,
        b.clone(),
        DMatrix::identity(n, n),
        -1.0,
        SignConvention::Diagonal,
    )?;

    let mut rows = Vec::with_capacity(delay_steps.len());
    for &delay in delay_steps {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1000 + delay as u64));
        let data: Vec<Trial> = (0..trials)
            .map(|_| make_trial(delay, cfg.distractor_rate, &mut rng))
            .collect();
        let labels: Vec<usize> = data.iter().map(|t| t.label).collect();
        let control: Vec<usize> = (0..trials).map(|_| usize::from(rng.random::<bool>())).collect();
        for l in [&labels, &control] {
            if !both_classes(&l[..n_train]) {
                return Err(FlamesError::invalid("trials", "training split is missing a class"));
            }
        }
        let flames = data
            .iter()
            .map(|t| flames_features(&kernel, cfg, t))
            .collect::<Result<Vec<_>>>()?;
        let lif = data
            .iter()
            .map(|t| lif_features(&b, cfg, t))
            .collect::<Result<Vec<_>>>()?;
        let score = |feats: &[Vec<f64>], y: &[usize]| {
            fit_and_score(
                feats[..n_train].to_vec(),
                feats[n_train..].to_vec(),
                &y[..n_train],
                &y[n_train..],
                cfg.ridge_lambda,
            )
        };
        rows.push(RecallRow {
            delay,
            flames_accuracy: score(&flames, &labels)?,
            lif_accuracy: score(&lif, &labels)?,
            flames_control: score(&flames, &control)?,
            lif_control: score(&lif, &control)?,
        });
    }
    Ok(rows)
}

pub fn write_csv<W: std::io::Write>(rows: &[RecallRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "delay,flames_accuracy,lif_accuracy,flames_control,lif_control")?;
    for r in rows {
        writeln!(
            out,
            "{},{:.4},{:.4},{:.4},{:.4}",
            r.delay, r.flames_accuracy, r.lif_accuracy, r.flames_control, r.lif_control
        )?;
    }
    Ok(())
}
