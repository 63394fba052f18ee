//! Closed-form ridge regression readout on frozen features.

use nalgebra::{DMatrix, DVector};

use crate::error::{FlamesError, Result};
use crate::model::readout::{ReadoutHead, ReadoutSelect};

/// Fits `W, b` to one-hot targets with an unpenalized bias:
/// `W = (XcᵀXc + λI)⁻¹ XcᵀYc` on centred data and `b = ȳ - W x̄`.
pub fn train_ridge_readout(features: &[Vec<f64>], labels: &[usize], lambda: f64) -> Result<ReadoutHead> {
    if features.len() != labels.len() {
        return Err(FlamesError::invalid("labels", "one label per example required"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(FlamesError::invalid("lambda", "must be finite and non-negative"));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    if classes < 2 || (0..classes).any(|c| !labels.contains(&c)) {
        return Err(FlamesError::invalid("labels", "need at least two classes, each with an example"));
    }
    let n = features.len();
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(FlamesError::invalid("features", "vectors differ in length"));
    }
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let y = DMatrix::from_fn(n, classes, |i, c| f64::from(u8::from(labels[i] == c)));
    let x_mean = x.row_mean();
    let y_mean = y.row_mean();
    let mut xc = x;
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    let mut yc = y;
    for mut row in yc.row_iter_mut() {
        row -= &y_mean;
    }
    let mut gram = xc.transpose() * &xc;
    for i in 0..d {
        gram[(i, i)] += lambda;
    }
    let rhs = xc.transpose() * &yc;
    let scale = gram.diagonal().amax().max(f64::MIN_POSITIVE);
    let chol = gram.cholesky().filter(|c| {
        let l = c.l_dirty();
        (0..d).all(|i| l[(i, i)] * l[(i, i)] > 1e-12 * scale)
    });
    let Some(chol) = chol else {
        return Err(FlamesError::Singular(
            "ridge normal equations are singular; use lambda > 0".into(),
        ));
    };
    let w = chol.solve(&rhs).transpose();
    let b: DVector<f64> = y_mean.transpose() - &w * x_mean.transpose();
    ReadoutHead::new(1, w, b, ReadoutSelect::Final)
}

/// Index of the largest score, first on ties.
pub fn predict(head: &ReadoutHead, feature: &[f64]) -> usize {
    let s = &head.w * DVector::from_column_slice(feature) + &head.b;
    s.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if *v > best.1 { (i, *v) } else { best })
        .0
}

pub fn accuracy(head: &ReadoutHead, features: &[Vec<f64>], labels: &[usize]) -> f64 {
    if features.is_empty() {
        return 0.0;
    }
    let hits = features.iter().zip(labels).filter(|(f, l)| predict(head, f) == **l).count();
    hits as f64 / features.len() as f64
}
