//! Accuracy metrics, reference predictors, predictor comparison and the
//! synthetic corpus generator.

mod baselines;
mod compare;
mod metrics;
mod synth;

pub use baselines::{
    baseline_linear_regression, baseline_moving_average, constant_mean, moving_average_predict, LinearModel,
};
pub use compare::{compare_predictors, write_comparison_csv, ComparisonReport, PredictorKind, PredictorScore};
pub use metrics::{compute_metrics, pred_fraction, MetricReport, PredAt, DEFAULT_PRED_THRESHOLDS};
pub use synth::{generate_synthetic, GroundTruth, PlantedFailure, PlantedScales, SyntheticData, SyntheticSpec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::predictor::{CvError, FeatureError, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no predictions to evaluate")]
    Empty,
    #[error("non-finite prediction or label")]
    NonFinite,
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("linear system is singular")]
    Singular,
    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),
    #[error("inputs disagree in length: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Cv(#[from] CvError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Days of label history averaged by the moving-average predictor.
    pub moving_average_window: usize,
    pub pred_thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            moving_average_window: 7,
            pred_thresholds: DEFAULT_PRED_THRESHOLDS.to_vec(),
        }
    }
}
