//! Event-driven state propagation.

pub mod conv;
pub mod envelope;
pub mod expm;
pub mod nplr;
pub mod step;

pub use conv::{build_conv_kernel, fft_convolve, ConvKernel};
pub use expm::{expm_phi, expm_taylor, phi_matrix};
pub use nplr::{nplr_decompose, nplr_matvec, NplrFactors};
pub use step::{readout, step, threshold_spikes, KernelState, StepConfig, Stepper};
