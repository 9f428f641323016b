use serde::{Deserialize, Serialize};

use super::EvalError;

/// Default Pred(N) thresholds; 0.05 is the headline one.
pub const DEFAULT_PRED_THRESHOLDS: [f64; 4] = [0.01, 0.05, 0.10, 0.25];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredAt {
    pub threshold: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub mse: f64,
    /// Median of the squared errors.
    pub md_mse: f64,
    /// Population standard deviation of the squared errors.
    pub std_mse: f64,
    /// Fraction of estimates whose squared error is at most the threshold.
    pub pred_n: Vec<PredAt>,
    /// Share of estimates on the right side of 0.5.
    pub accuracy: f64,
}

impl MetricReport {
    pub fn pred(&self, threshold: f64) -> Option<f64> {
        self.pred_n
            .iter()
            .find(|p| p.threshold == threshold)
            .map(|p| p.fraction)
    }
}

/// Fraction of squared errors `<= threshold`.
pub fn pred_fraction(squared_errors: &[f64], threshold: f64) -> f64 {
    let hits = squared_errors.iter().filter(|&&e| e <= threshold).count();
    hits as f64 / squared_errors.len() as f64
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Metrics over `(predicted, actual)` pairs.
pub fn compute_metrics(pairs: &[(f64, f64)], thresholds: &[f64]) -> Result<MetricReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    if pairs.iter().any(|(p, a)| !p.is_finite() || !a.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let sq: Vec<f64> = pairs.iter().map(|(p, a)| (p - a) * (p - a)).collect();
    let n = sq.len() as f64;
    let mse = sq.iter().sum::<f64>() / n;
    let mut sorted = sq.clone();
    sorted.sort_by(f64::total_cmp);
    let md_mse = median(&sorted);
    let std_mse = (sorted.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / n).sqrt();
    let pred_n = thresholds
        .iter()
        .map(|&t| PredAt {
            threshold: t,
            fraction: pred_fraction(&sq, t),
        })
        .collect();
    let correct = pairs.iter().filter(|(p, a)| (*p >= 0.5) == (*a >= 0.5)).count();
    Ok(MetricReport {
        n: pairs.len(),
        mse,
        md_mse,
        std_mse,
        pred_n,
        accuracy: correct as f64 / n,
    })
}
