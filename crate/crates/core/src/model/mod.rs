//! The full forward path: dendrite layer, convolutional features, stacked
//! spike-aware state-space blocks with layer norm and residuals, readout.

pub mod config;
pub mod features;
pub mod norm;
pub mod readout;
pub mod ridge;

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FlamesError, Result};
use crate::events::{batch_flat, EventStream, Geometry, SpikeBatch};
use crate::hippo::{gaussian, KernelParams, SaHippoKernel};
use crate::kernel::{
    build_conv_kernel, envelope, nplr_decompose, threshold_spikes, KernelState, StepConfig, Stepper,
};
use crate::linalg;
use crate::neuron::DendriteLayer;

pub use config::{ConvMode, ModelConfig, Variant};
pub use features::FeatureExtractor;
pub use norm::{layer_norm, residual_add, NormParams};
pub use readout::{event_pool, readout_forward, softmax, ReadoutHead, ReadoutSelect};
pub use ridge::{accuracy, predict, train_ridge_readout};

/// Longest uniform grid the FFT mode will build.
const MAX_FFT_GRID: usize = 1 << 22;

/// SplitMix64 finalizer, used to give each component its own seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
struct Block {
    kernel: SaHippoKernel,
    norm: NormParams,
    b_norm: f64,
}

/// One diagnostics row; `state_norm` and `bound` are NaN in FFT mode, where
/// no state vector is formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub block: usize,
    pub t: f64,
    pub state_norm: f64,
    pub bound: f64,
    pub spikes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFlags {
    pub variant: Variant,
    pub sa_hippo: bool,
    pub dendrite_branches: usize,
    pub mode: ConvMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardOutput {
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub flags: ModelFlags,
    pub input_batches: usize,
    pub dendrite_spikes: usize,
    pub block_spikes: Vec<usize>,
    #[serde(skip)]
    pub diagnostics: Vec<DiagnosticRow>,
}

impl ForwardOutput {
    pub fn write_diagnostics_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "block,t,state_norm,bound,spikes")?;
        for r in &self.diagnostics {
            writeln!(out, "{},{},{},{},{}", r.block, r.t, r.state_norm, r.bound, r.spikes)?;
        }
        Ok(())
    }
}

/// A model instance with all random parameters drawn for one sensor
/// geometry.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    seed: u64,
    dendrite: DendriteLayer,
    features: FeatureExtractor,
    blocks: Vec<Block>,
    head: ReadoutHead,
}

impl Model {
    pub fn new(config: &ModelConfig, geometry: Geometry, seed: u64) -> Result<Self> {
        config.validate()?;
        let dendrite = DendriteLayer::grid(geometry, &config.dendrite(), derive_seed(seed, 1))?;
        let features = FeatureExtractor::new(geometry, config.conv_filters, derive_seed(seed, 2));
        let f = features.output_dim();
        let blocks = (0..config.num_ssm_blocks)
            .map(|i| {
                let params = KernelParams {
                    order: config.order,
                    alpha0: Some(config.effective_alpha0()),
                    alpha: None,
                    seed: derive_seed(seed, 100 + i as u64),
                    stability_sign: -1,
                    sign_convention: config.sign_convention,
                    input_dim: f,
                    output_dim: f,
                };
                let kernel = SaHippoKernel::from_params(&params)?;
                let b_norm = linalg::spectral_norm(kernel.b());
                Ok(Block {
                    kernel,
                    norm: NormParams::identity(f),
                    b_norm,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
        let w = gaussian(config.readout_width, f, 1.0 / (f as f64).sqrt(), &mut rng);
        let b = DVector::from_column_slice(gaussian(config.readout_width, 1, 0.1, &mut rng).as_slice());
        let head = ReadoutHead::new(config.pool_factor, w, b, config.readout)?;
        Ok(Self {
            config: config.clone(),
            seed,
            dendrite,
            features,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn head(&self) -> &ReadoutHead {
        &self.head
    }

    pub fn kernels(&self) -> impl Iterator<Item = &SaHippoKernel> {
        self.blocks.iter().map(|b| &b.kernel)
    }

    pub fn flags(&self) -> ModelFlags {
        ModelFlags {
            variant: self.config.variant,
            sa_hippo: !self.config.no_sa_hippo,
            dendrite_branches: self.dendrite.branch_count(),
            mode: self.config.mode,
        }
    }

    fn step_config(&self) -> StepConfig {
        StepConfig {
            terms: self.config.taylor_order,
            substep_radius: self.config.substep_radius,
            ..StepConfig::for_alpha0(self.config.effective_alpha0())
        }
    }

    /// Runs the whole stack over `stream`. The model state is reset first,
    /// so repeated calls are independent.
    pub fn forward(&mut self, stream: &EventStream) -> Result<ForwardOutput> {
        if stream.geometry() != self.dendrite.geometry() {
            return Err(FlamesError::invalid("geometry", "stream geometry differs from the model's"));
        }
        self.dendrite.reset();
        let batches = batch_flat(stream)?;
        let mut maps = Vec::with_capacity(batches.len());
        let mut dendrite_spikes = 0;
        for batch in &batches {
            let fired = self.dendrite.tick(batch)?;
            dendrite_spikes += fired.len();
            let mut map = vec![0.0; stream.geometry().pixels()];
            fired.iter().for_each(|&i| map[i] = 1.0);
            maps.push(map);
        }
        let mut seq: Vec<Vec<f64>> = maps
            .par_iter()
            .map(|m| self.features.extract(m).map(|v| v.as_slice().to_vec()))
            .collect::<Result<_>>()?;
        let times: Vec<f64> = batches.iter().map(|b| b.t).collect();
        let mut diagnostics = Vec::new();
        let mut block_spikes = Vec::new();
        for (bi, block) in self.blocks.iter().enumerate() {
            let outputs = match self.config.mode {
                ConvMode::Recurrent => self.run_recurrent(block, &times, &seq, bi + 1, &mut diagnostics)?,
                ConvMode::Fft => self.run_fft(block, &times, &seq, bi + 1, &mut diagnostics)?,
            };
            let mut spikes = 0;
            let mut next = Vec::with_capacity(seq.len());
            for (z, y) in seq.iter().zip(&outputs) {
                spikes += threshold_spikes(y, self.config.v_th).iter().map(|s| *s as usize).sum::<usize>();
                next.push(residual_add(z, &layer_norm(y, &block.norm)?)?);
            }
            block_spikes.push(spikes);
            seq = next;
        }
        // per-row spike counts were filled by the runners; totals above
        let head = match self.config.readout {
            ReadoutSelect::Final => self.head.clone(),
            ReadoutSelect::Concat => self.concat_head(seq.len())?,
        };
        let scores = readout_forward(&head, &seq)?;
        let scores = scores.as_slice().to_vec();
        Ok(ForwardOutput {
            probabilities: softmax(&scores),
            scores,
            flags: self.flags(),
            input_batches: batches.len(),
            dendrite_spikes,
            block_spikes,
            diagnostics,
        })
    }

    fn concat_head(&self, steps: usize) -> Result<ReadoutHead> {
        let windows = steps.div_ceil(self.config.pool_factor).max(1);
        let f = self.features.output_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 4));
        let w = gaussian(self.config.readout_width, f * windows, 1.0 / ((f * windows) as f64).sqrt(), &mut rng);
        let mut head = ReadoutHead::new(self.config.pool_factor, w, self.head.b.clone(), ReadoutSelect::Concat)?;
        if steps == 0 {
            head.w = DMatrix::zeros(self.config.readout_width, f);
        }
        Ok(head)
    }

    fn run_recurrent(
        &self,
        block: &Block,
        times: &[f64],
        inputs: &[Vec<f64>],
        index: usize,
        diagnostics: &mut Vec<DiagnosticRow>,
    ) -> Result<Vec<Vec<f64>>> {
        let Some(&t0) = times.first() else {
            return Ok(Vec::new());
        };
        let kernel = &block.kernel;
        let mut stepper = Stepper::new(kernel, self.step_config());
        let mut state = KernelState::zeros(kernel.order(), t0 - self.config.dt_grid);
        let base_rate = envelope::contraction_rate(kernel.dynamics());
        let mut rates: HashMap<u64, f64> = HashMap::new();
        let mut bound = 0.0;
        let mut outputs = Vec::with_capacity(times.len());
        for (&t, z) in times.iter().zip(inputs) {
            let raw_dt = t - state.last_t;
            let a = stepper.matrix_for(raw_dt)?;
            let dt = clamp_dt(&self.step_config(), raw_dt);
            let rate = match kernel.alpha().uniform_rate() {
                Some(alpha) => base_rate * (-alpha * dt).exp(),
                None => *rates.entry(dt.to_bits()).or_insert_with(|| envelope::contraction_rate(&a)),
            };
            let s_norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            bound = envelope::envelope(bound, rate, block.b_norm * s_norm, dt);
            stepper.step(&mut state, &SpikeBatch::new(t, z.clone()))?;
            let y = (kernel.c() * &state.x).as_slice().to_vec();
            diagnostics.push(DiagnosticRow {
                block: index,
                t,
                state_norm: state.norm(),
                bound,
                spikes: threshold_spikes(&y, self.config.v_th).iter().map(|s| *s as usize).sum(),
            });
            outputs.push(y);
        }
        Ok(outputs)
    }

    fn run_fft(
        &self,
        block: &Block,
        times: &[f64],
        inputs: &[Vec<f64>],
        index: usize,
        diagnostics: &mut Vec<DiagnosticRow>,
    ) -> Result<Vec<Vec<f64>>> {
        let Some(&t0) = times.first() else {
            return Ok(Vec::new());
        };
        let dt = self.config.dt_grid;
        let cells: Vec<usize> = times.iter().map(|t| ((t - t0) / dt).round() as usize).collect();
        let len = cells.last().map_or(0, |c| c + 1);
        if len > MAX_FFT_GRID {
            return Err(FlamesError::invalid(
                "dt_grid",
                format!("stream needs {len} grid cells; the FFT mode allows {MAX_FFT_GRID}"),
            ));
        }
        let kernel = &block.kernel;
        let a = crate::hippo::adaptive_matrix(kernel, dt)?;
        let factors = nplr_decompose(&a, self.config.rank)?;
        let conv = build_conv_kernel(kernel, &factors, len, dt)?;
        let m = kernel.input_dim();
        let mut grid = vec![vec![0.0; len]; m];
        // each batch contributes its input integrated over the interval it
        // is held for, as in the recurrent path
        let cfg = self.step_config();
        let mut last = t0 - dt;
        for ((cell, z), &t) in cells.iter().zip(inputs).zip(times) {
            let held = clamp_dt(&cfg, t - last);
            last = t;
            for (ch, v) in z.iter().enumerate() {
                grid[ch][*cell] += v * held;
            }
        }
        let y_grid = conv.convolve(&grid)?;
        let mut outputs = Vec::with_capacity(times.len());
        for (&t, &cell) in times.iter().zip(&cells) {
            let y: Vec<f64> = y_grid.iter().map(|row| row[cell]).collect();
            diagnostics.push(DiagnosticRow {
                block: index,
                t,
                state_norm: f64::NAN,
                bound: f64::NAN,
                spikes: threshold_spikes(&y, self.config.v_th).iter().map(|s| *s as usize).sum(),
            });
            outputs.push(y);
        }
        Ok(outputs)
    }
}

fn clamp_dt(cfg: &StepConfig, dt: f64) -> f64 {
    match cfg.max_dt {
        Some(cap) if dt > cap => cap,
        _ => dt,
    }
}

/// Builds a model for the stream's geometry and runs it once.
pub fn forward(config: &ModelConfig, stream: &EventStream, seed: u64) -> Result<ForwardOutput> {
    Model::new(config, stream.geometry(), seed)?.forward(stream)
}
