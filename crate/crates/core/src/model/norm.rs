//! Layer normalization and residual connections.

use serde::{Deserialize, Serialize};

use crate::error::{FlamesError, Result};

pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub gamma: Vec<f64>,
    pub beta_shift: Vec<f64>,
    pub epsilon: f64,
}

impl NormParams {
    /// `γ = 1`, `β = 0`.
    pub fn identity(features: usize) -> Self {
        Self {
            gamma: vec![1.0; features],
            beta_shift: vec![0.0; features],
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn broadcast(features: usize, gamma: f64, beta: f64, epsilon: f64) -> Self {
        Self {
            gamma: vec![gamma; features],
            beta_shift: vec![beta; features],
            epsilon,
        }
    }
}

/// `(x - μ)/sqrt(σ² + ε)·γ + β` over the feature dimension (population
/// variance).
pub fn layer_norm(x: &[f64], params: &NormParams) -> Result<Vec<f64>> {
    let f = x.len();
    if f == 0 {
        return Err(FlamesError::invalid("x", "layer norm needs at least one feature"));
    }
    if params.gamma.len() != f || params.beta_shift.len() != f {
        return Err(FlamesError::invalid(
            "norm",
            format!("parameters sized {} for {f} features", params.gamma.len()),
        ));
    }
    if !(params.epsilon > 0.0) {
        return Err(FlamesError::invalid("epsilon", "must be positive"));
    }
    let mean = x.iter().sum::<f64>() / f as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f as f64;
    let inv = 1.0 / (var + params.epsilon).sqrt();
    Ok(x.iter()
        .zip(&params.gamma)
        .zip(&params.beta_shift)
        .map(|((v, g), b)| (v - mean) * inv * g + b)
        .collect())
}

pub fn residual_add(x_in: &[f64], f_out: &[f64]) -> Result<Vec<f64>> {
    if x_in.len() != f_out.len() {
        return Err(FlamesError::invalid(
            "residual",
            format!("length mismatch {} vs {}", x_in.len(), f_out.len()),
        ));
    }
    Ok(x_in.iter().zip(f_out).map(|(a, b)| a + b).collect())
}
