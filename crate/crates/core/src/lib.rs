//! Event-driven spiking state-space models: spike-aware HiPPO memory,
//! normal-plus-low-rank updates, FFT convolution and DH-LIF dendrites, with
//! executable checks for the accompanying stability and error bounds.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod events;
pub mod hippo;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod neuron;

pub use error::{FlamesError, Result};
