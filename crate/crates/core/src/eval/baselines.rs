//! Reference predictors: trailing moving average of labels by day,
//! ordinary least squares on the normalized features, and the
//! constant training mean.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::predictor::{FeatureVector, NormStats, FEATURE_COUNT};
use crate::task::Day;

/// Predictions for tasks arriving on `queries` from labelled `history`:
/// the mean label of history tasks within the `window` days before the
/// query day. With no history in the window the mean of all earlier
/// history is used, and `prior` when there is none at all.
pub fn moving_average_predict(history: &[(Day, f64)], queries: &[Day], window: usize, prior: f64) -> Vec<f64> {
    let window = window.max(1) as Day;
    let mut days: Vec<(Day, f64)> = history.to_vec();
    days.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    // prefix[i] = (sum, count) of the first i history rows
    let mut prefix = Vec::with_capacity(days.len() + 1);
    prefix.push((0.0, 0usize));
    for &(_, y) in &days {
        let (s, c) = *prefix.last().unwrap();
        prefix.push((s + y, c + 1));
    }
    let before = |day: Day| days.partition_point(|(d, _)| *d < day);
    queries
        .iter()
        .map(|&t| {
            let hi = before(t);
            let lo = before(t - window);
            let (sh, ch) = prefix[hi];
            let (sl, cl) = prefix[lo];
            if ch > cl {
                (sh - sl) / (ch - cl) as f64
            } else if ch > 0 {
                sh / ch as f64
            } else {
                prior
            }
        })
        .collect()
}

/// Moving-average prediction for every element of a labelled series
/// from the elements on strictly earlier days; 0.5 on the first day.
pub fn baseline_moving_average(series: &[(Day, f64)], window: usize) -> Vec<f64> {
    let days: Vec<Day> = series.iter().map(|s| s.0).collect();
    moving_average_predict(series, &days, window, 0.5)
}

/// Intercept plus one coefficient per z-scored feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub norm: NormStats,
    pub intercept: f64,
    pub coefficients: [f64; FEATURE_COUNT],
    /// A ridge term was needed because the design was rank deficient.
    pub ridge_applied: bool,
}

const MIN_LINEAR_ROWS: usize = 5;
const RIDGE: f64 = 1e-8;

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0f64, f64::max).max(1.0);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let pivot_row = a[col].clone();
        for row in col + 1..n {
            let f = a[row][col] / pivot_row[col];
            if f == 0.0 {
                continue;
            }
            for (dst, src) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *dst -= f * src;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

impl LinearModel {
    pub fn fit(features: &[FeatureVector], labels: &[f64]) -> Result<Self, EvalError> {
        if features.len() < MIN_LINEAR_ROWS || features.len() != labels.len() {
            return Err(EvalError::TooFewRows {
                needed: MIN_LINEAR_ROWS,
                got: features.len().min(labels.len()),
            });
        }
        let norm = NormStats::fit(features);
        const P: usize = FEATURE_COUNT + 1;
        let mut xtx = vec![vec![0.0; P]; P];
        let mut xty = vec![0.0; P];
        for (f, &y) in features.iter().zip(labels) {
            let z = norm.apply(f);
            let row: [f64; P] = std::array::from_fn(|k| if k == 0 { 1.0 } else { z[k - 1] });
            for i in 0..P {
                xty[i] += row[i] * y;
                for j in 0..P {
                    xtx[i][j] += row[i] * row[j];
                }
            }
        }
        let (beta, ridge_applied) = match solve(xtx.clone(), xty.clone()) {
            Some(b) => (b, false),
            None => {
                let lambda = RIDGE * features.len() as f64;
                let mut ridged = xtx;
                for (i, row) in ridged.iter_mut().enumerate().skip(1) {
                    row[i] += lambda;
                }
                (solve(ridged, xty).ok_or(EvalError::Singular)?, true)
            }
        };
        Ok(LinearModel {
            norm,
            intercept: beta[0],
            coefficients: std::array::from_fn(|k| beta[k + 1]),
            ridge_applied,
        })
    }

    /// Unclamped linear response.
    pub fn raw(&self, x: &FeatureVector) -> f64 {
        let z = self.norm.apply(x);
        self.intercept + z.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict(&self, x: &FeatureVector) -> f64 {
        self.raw(x).clamp(0.0, 1.0)
    }
}

/// Fits on `features`/`labels` and predicts `queries`, clamped to [0, 1].
pub fn baseline_linear_regression(
    features: &[FeatureVector],
    labels: &[f64],
    queries: &[FeatureVector],
) -> Result<Vec<f64>, EvalError> {
    let m = LinearModel::fit(features, labels)?;
    Ok(queries.iter().map(|q| m.predict(q)).collect())
}

/// Mean of the training labels.
pub fn constant_mean(labels: &[f64]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().sum::<f64>() / labels.len() as f64
}
