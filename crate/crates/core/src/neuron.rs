//! DH-LIF dendrite neurons and spatial max pooling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FlamesError, Result};
use crate::events::{EventStream, Geometry, SpikeBatch, SpikeEvent};

/// How the elapsed time between ticks enters the decay factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TickMode {
    /// `α = e^{-Δt/τ}` with the real inter-batch interval in seconds.
    #[default]
    Elapsed,
    /// Every batch is one unit step, `α = e^{-1/τ}` with `τ` in ticks.
    Unit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DendriteBranch {
    tau: f64,
    weights: Vec<(usize, f64)>,
    pub current: f64,
}

impl DendriteBranch {
    pub fn new(tau: f64, weights: Vec<(usize, f64)>) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(FlamesError::invalid("tau_d", "must be positive"));
        }
        Ok(Self {
            tau,
            weights,
            current: 0.0,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn weights(&self) -> &[(usize, f64)] {
        &self.weights
    }

    /// `e^{-dt/τ}`; an infinite `τ` gives a perfect integrator.
    pub fn alpha(&self, dt: f64) -> f64 {
        (-dt / self.tau).exp()
    }

    /// `i ← α i + Σ_{j∈N_d} w_j p_j`. Channels outside `inputs` count as 0.
    pub fn step(&mut self, inputs: &[f64], dt: f64) -> f64 {
        let drive: f64 = self
            .weights
            .iter()
            .filter_map(|(j, w)| inputs.get(*j).map(|p| w * p))
            .sum();
        self.current = self.alpha(dt) * self.current + drive;
        self.current
    }
}

/// Free-function form of [`DendriteBranch::step`].
pub fn dendrite_step(branch: &mut DendriteBranch, inputs: &[f64], dt: f64) -> f64 {
    branch.step(inputs, dt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DhLifNeuron {
    pub branches: Vec<DendriteBranch>,
    pub g: Vec<f64>,
    tau_s: f64,
    pub v: f64,
    pub v_th: f64,
}

impl DhLifNeuron {
    pub fn new(branches: Vec<DendriteBranch>, g: Vec<f64>, tau_s: f64, v_th: f64) -> Result<Self> {
        if branches.len() != g.len() {
            return Err(FlamesError::invalid("g", "one coupling per branch required"));
        }
        if !(tau_s > 0.0) {
            return Err(FlamesError::invalid("tau_s", "must be positive"));
        }
        if !v_th.is_finite() {
            return Err(FlamesError::invalid("v_th", "must be finite"));
        }
        Ok(Self {
            branches,
            g,
            tau_s,
            v: 0.0,
            v_th,
        })
    }

    pub fn tau_s(&self) -> f64 {
        self.tau_s
    }

    pub fn beta(&self, dt: f64) -> f64 {
        (-dt / self.tau_s).exp()
    }

    /// `v ← β v + Σ_d g_d i_d`; fires and resets to 0 when `v > v_th`.
    pub fn soma_step(&mut self, dt: f64) -> (f64, bool) {
        let input: f64 = self.branches.iter().zip(&self.g).map(|(b, g)| g * b.current).sum();
        self.v = self.beta(dt) * self.v + input;
        let potential = self.v;
        let spike = potential > self.v_th;
        if spike {
            self.v = 0.0;
        }
        (potential, spike)
    }

    /// Dendrites then soma for one tick.
    pub fn tick(&mut self, inputs: &[f64], dt: f64) -> bool {
        for b in &mut self.branches {
            b.step(inputs, dt);
        }
        self.soma_step(dt).1
    }

    pub fn reset(&mut self) {
        self.v = 0.0;
        for b in &mut self.branches {
            b.current = 0.0;
        }
    }
}

/// Free-function form of [`DhLifNeuron::soma_step`].
pub fn soma_step(neuron: &mut DhLifNeuron, dt: f64) -> (f64, bool) {
    neuron.soma_step(dt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DendriteConfig {
    pub branches: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_soma: f64,
    pub v_th: f64,
    /// Receptive field half-width; 1 gives a 3x3 neighbourhood.
    pub radius: u32,
    pub shared_weights: bool,
    pub tick_mode: TickMode,
}

impl Default for DendriteConfig {
    fn default() -> Self {
        Self {
            branches: 16,
            tau_min: 1e-3,
            tau_max: 1.0,
            tau_soma: 0.02,
            v_th: 0.5,
            radius: 1,
            shared_weights: false,
            tick_mode: TickMode::Elapsed,
        }
    }
}

impl DendriteConfig {
    /// `D` time constants log-spaced over `[tau_min, tau_max]`.
    pub fn taus(&self) -> Vec<f64> {
        let d = self.branches;
        if d == 1 {
            return vec![self.tau_min];
        }
        let (lo, hi) = (self.tau_min.ln(), self.tau_max.ln());
        (0..d).map(|i| (lo + (hi - lo) * i as f64 / (d - 1) as f64).exp()).collect()
    }

    /// Single-branch leaky integrate-and-fire replacement whose only time
    /// constant is the soma's.
    pub fn single_tau(&self) -> Self {
        Self {
            branches: 1,
            tau_min: self.tau_soma,
            tau_max: self.tau_soma,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches == 0 {
            return Err(FlamesError::invalid("dendrite_branches", "must be at least 1"));
        }
        if !(self.tau_min > 0.0 && self.tau_max >= self.tau_min && self.tau_max.is_finite()) {
            return Err(FlamesError::invalid("tau_min", "need 0 < tau_min <= tau_max < inf"));
        }
        if !(self.tau_soma > 0.0 && self.tau_soma.is_finite()) {
            return Err(FlamesError::invalid("tau_soma", "must be positive and finite"));
        }
        if !self.v_th.is_finite() {
            return Err(FlamesError::invalid("v_th", "must be finite"));
        }
        Ok(())
    }
}

/// One DH-LIF neuron per pixel of a sensor grid.
#[derive(Debug, Clone)]
pub struct DendriteLayer {
    neurons: Vec<DhLifNeuron>,
    geometry: Geometry,
    mode: TickMode,
    last_t: Option<f64>,
}

fn neighbourhood(geometry: Geometry, x: u32, y: u32, radius: u32) -> Vec<(i64, i64, usize)> {
    let r = i64::from(radius);
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let (nx, ny) = (i64::from(x) + dx, i64::from(y) + dy);
            if nx >= 0 && ny >= 0 && nx < i64::from(geometry.width) && ny < i64::from(geometry.height) {
                out.push((dx, dy, ny as usize * geometry.width as usize + nx as usize));
            }
        }
    }
    out
}

impl DendriteLayer {
    pub fn from_neurons(neurons: Vec<DhLifNeuron>, geometry: Geometry, mode: TickMode) -> Result<Self> {
        if neurons.len() != geometry.pixels() {
            return Err(FlamesError::invalid("neurons", "one neuron per pixel required"));
        }
        Ok(Self {
            neurons,
            geometry,
            mode,
            last_t: None,
        })
    }

    /// Random layer: branch `d` of every neuron sees the neighbourhood
    /// around its pixel with Gaussian weights of std `1/sqrt(|N_d|)`, and
    /// `g_d = 1/D`.
    pub fn grid(geometry: Geometry, cfg: &DendriteConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let taus = cfg.taus();
        let d = cfg.branches;
        let side = (2 * cfg.radius + 1) as usize;
        let shared: Vec<Vec<f64>> = if cfg.shared_weights {
            let std = 1.0 / (side * side) as f64;
            let normal = Normal::new(0.0, std.sqrt()).expect("positive std");
            (0..d).map(|_| (0..side * side).map(|_| normal.sample(&mut rng)).collect()).collect()
        } else {
            Vec::new()
        };
        let mut neurons = Vec::with_capacity(geometry.pixels());
        for y in 0..geometry.height {
            for x in 0..geometry.width {
                let hood = neighbourhood(geometry, x, y, cfg.radius);
                let normal = Normal::new(0.0, 1.0 / (hood.len() as f64).sqrt()).expect("positive std");
                let branches = taus
                    .iter()
                    .enumerate()
                    .map(|(bi, &tau)| {
                        let weights = hood
                            .iter()
                            .map(|&(dx, dy, ch)| {
                                let w = if cfg.shared_weights {
                                    let k = ((dy + i64::from(cfg.radius)) as usize) * side
                                        + (dx + i64::from(cfg.radius)) as usize;
                                    shared[bi][k]
                                } else {
                                    normal.sample(&mut rng)
                                };
                                (ch, w)
                            })
                            .collect();
                        DendriteBranch::new(tau, weights)
                    })
                    .collect::<Result<Vec<_>>>()?;
                neurons.push(DhLifNeuron::new(branches, vec![1.0 / d as f64; d], cfg.tau_soma, cfg.v_th)?);
            }
        }
        Self::from_neurons(neurons, geometry, cfg.tick_mode)
    }

    pub fn neurons(&self) -> &[DhLifNeuron] {
        &self.neurons
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn branch_count(&self) -> usize {
        self.neurons.first().map_or(0, |n| n.branches.len())
    }

    pub fn reset(&mut self) {
        self.last_t = None;
        self.neurons.iter_mut().for_each(DhLifNeuron::reset);
    }

    /// Steps every neuron once with `batch` and returns the indices that
    /// fired.
    pub fn tick(&mut self, batch: &SpikeBatch) -> Result<Vec<usize>> {
        if batch.values.len() != self.neurons.len() {
            return Err(FlamesError::invalid(
                "batch",
                format!("expected {} channels, got {}", self.neurons.len(), batch.values.len()),
            ));
        }
        let dt = match (self.mode, self.last_t) {
            (TickMode::Unit, _) => 1.0,
            (TickMode::Elapsed, Some(last)) if batch.t >= last => batch.t - last,
            (TickMode::Elapsed, Some(last)) => {
                return Err(FlamesError::TemporalOrder { last, next: batch.t });
            }
            (TickMode::Elapsed, None) => 0.0,
        };
        self.last_t = Some(batch.t);
        let fired: Vec<bool> = self
            .neurons
            .par_iter_mut()
            .map(|n| n.tick(&batch.values, dt))
            .collect();
        Ok(fired.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i).collect())
    }
}

/// Runs the layer over time-sorted batches and emits one event per spike
/// at the batch timestamp, located at the firing neuron's pixel.
pub fn layer_forward(layer: &mut DendriteLayer, batches: &[SpikeBatch]) -> Result<EventStream> {
    let g = layer.geometry();
    let mut events = Vec::new();
    for batch in batches {
        for i in layer.tick(batch)? {
            let (x, y) = (i as u32 % g.width, i as u32 / g.width);
            events.push(SpikeEvent::new(batch.t, x, y, 1.0));
        }
    }
    EventStream::new(events, g, g.pixels())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub window: u32,
    pub stride: u32,
    pub geometry: Geometry,
}

impl PoolConfig {
    pub fn square(window: u32, geometry: Geometry) -> Self {
        Self {
            window,
            stride: window,
            geometry,
        }
    }

    pub fn output_geometry(&self) -> Geometry {
        Geometry::new(self.geometry.width.div_ceil(self.stride), self.geometry.height.div_ceil(self.stride))
    }
}

/// Per-window maximum together with the row-major index of the first
/// position attaining it.
pub fn spatial_max_pool_arg(activity: &[f64], cfg: &PoolConfig) -> Result<(Vec<f64>, Vec<usize>)> {
    if cfg.window == 0 || cfg.stride == 0 {
        return Err(FlamesError::invalid("window", "window and stride must be at least 1"));
    }
    let g = cfg.geometry;
    if activity.len() != g.pixels() {
        return Err(FlamesError::invalid(
            "activity",
            format!("expected {}x{} grid, got {} values", g.width, g.height, activity.len()),
        ));
    }
    let out = cfg.output_geometry();
    let (w, h) = (g.width as usize, g.height as usize);
    let (k, s) = (cfg.window as usize, cfg.stride as usize);
    let mut values = Vec::with_capacity(out.pixels());
    let mut args = Vec::with_capacity(out.pixels());
    for oy in 0..out.height as usize {
        for ox in 0..out.width as usize {
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for y in oy * s..(oy * s + k).min(h) {
                for x in ox * s..(ox * s + k).min(w) {
                    let v = activity[y * w + x];
                    if v > best.0 || best.1 == usize::MAX {
                        best = (v, y * w + x);
                    }
                }
            }
            values.push(best.0);
            args.push(best.1);
        }
    }
    Ok((values, args))
}

pub fn spatial_max_pool(activity: &[f64], cfg: &PoolConfig) -> Result<Vec<f64>> {
    Ok(spatial_max_pool_arg(activity, cfg)?.0)
}
