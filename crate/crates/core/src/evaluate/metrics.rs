//! Point metrics for volume predictions and cross-entropy for class shares.

use thiserror::Error;

use crate::state::NUM_CLASSES;

/// Floor applied to predicted shares inside the logarithm.
pub const CEL_FLOOR: f64 = 1e-12;

/// Simplex tolerance for metric inputs.
const METRIC_SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no records to score")]
    Empty,
    #[error("R² needs at least two records, got {0}")]
    TooFewForR2(usize),
    #[error("R² undefined: zero variance in the {0} series")]
    ZeroVariance(&'static str),
    #[error("distribution sums to {0}, not 1")]
    NotOnSimplex(f64),
}

fn check(y: &[f64], y_hat: &[f64]) -> Result<(), MetricError> {
    if y.len() != y_hat.len() {
        return Err(MetricError::LengthMismatch(y.len(), y_hat.len()));
    }
    if y.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricError> {
    check(y, y_hat)?;
    let total: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / y.len() as f64)
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricError> {
    check(y, y_hat)?;
    let total: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((total / y.len() as f64).sqrt())
}

/// Squared Pearson correlation between observed and predicted values.
pub fn pearson_r2(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricError> {
    check(y, y_hat)?;
    let n = y.len();
    if n < 2 {
        return Err(MetricError::TooFewForR2(n));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (my, mp) = (mean(y), mean(y_hat));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(y_hat) {
        let (da, db) = (a - my, b - mp);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 {
        return Err(MetricError::ZeroVariance("observed"));
    }
    if syy == 0.0 {
        return Err(MetricError::ZeroVariance("predicted"));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok((r * r).min(1.0))
}

fn check_simplex(p: &[f64; NUM_CLASSES]) -> Result<(), MetricError> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > METRIC_SIMPLEX_TOL || p.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(MetricError::NotOnSimplex(sum));
    }
    Ok(())
}

/// Cross-entropy of predicted shares `g` against observed shares `f`, in nats.
///
/// Classes with `f(i) = 0` contribute nothing; `g(i)` is floored at [`CEL_FLOOR`].
pub fn cel(f: &[f64; NUM_CLASSES], g: &[f64; NUM_CLASSES]) -> Result<f64, MetricError> {
    check_simplex(f)?;
    check_simplex(g)?;
    Ok(f.iter()
        .zip(g)
        .filter(|(fi, _)| **fi > 0.0)
        .map(|(fi, gi)| -fi * gi.max(CEL_FLOOR).ln())
        .sum())
}

/// Shannon entropy in nats.
pub fn entropy(f: &[f64; NUM_CLASSES]) -> Result<f64, MetricError> {
    cel(f, f)
}
