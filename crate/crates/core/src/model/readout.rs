//! Event pooling and the affine readout head.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FlamesError, Result};

/// Which pooled vectors feed the readout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutSelect {
    /// The last pooled window only.
    #[default]
    Final,
    /// Every pooled window, concatenated in time order.
    Concat,
}

/// Means over non-overlapping windows of `p` states; a trailing partial
/// window is averaged over its own length.
pub fn event_pool(states: &[Vec<f64>], p: usize) -> Result<Vec<Vec<f64>>> {
    if p == 0 {
        return Err(FlamesError::invalid("pool_factor", "must be at least 1"));
    }
    let Some(first) = states.first() else {
        return Ok(Vec::new());
    };
    let f = first.len();
    if states.iter().any(|s| s.len() != f) {
        return Err(FlamesError::invalid("states", "vectors differ in length"));
    }
    Ok(states
        .chunks(p)
        .map(|win| {
            let mut acc = vec![0.0; f];
            for s in win {
                for (a, v) in acc.iter_mut().zip(s) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a /= win.len() as f64);
            acc
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutHead {
    pub pool_factor: usize,
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub select: ReadoutSelect,
}

impl ReadoutHead {
    pub fn new(pool_factor: usize, w: DMatrix<f64>, b: DVector<f64>, select: ReadoutSelect) -> Result<Self> {
        if pool_factor == 0 {
            return Err(FlamesError::invalid("pool_factor", "must be at least 1"));
        }
        if w.nrows() != b.len() {
            return Err(FlamesError::invalid("b", "bias length must match rows of W"));
        }
        Ok(Self {
            pool_factor,
            w,
            b,
            select,
        })
    }

    pub fn outputs(&self) -> usize {
        self.b.len()
    }

    /// Feature vector the affine map is applied to; zeros when there are no
    /// states.
    pub fn features(&self, states: &[Vec<f64>]) -> Result<DVector<f64>> {
        let pooled = event_pool(states, self.pool_factor)?;
        let width = self.w.ncols();
        let v = match (self.select, pooled.last()) {
            (_, None) => vec![0.0; width],
            (ReadoutSelect::Final, Some(last)) => last.clone(),
            (ReadoutSelect::Concat, Some(_)) => pooled.concat(),
        };
        if v.len() != width {
            return Err(FlamesError::invalid(
                "readout",
                format!("W expects {width} features, got {}", v.len()),
            ));
        }
        Ok(DVector::from_vec(v))
    }
}

/// `y = W x_pooled + b`.
pub fn readout_forward(head: &ReadoutHead, states: &[Vec<f64>]) -> Result<DVector<f64>> {
    let x = head.features(states)?;
    Ok(&head.w * x + &head.b)
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}
