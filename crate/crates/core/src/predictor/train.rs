//! Mini-batch gradient descent on mean-squared error with early
//! stopping on a validation slice.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mlp::{Gradients, Trace};
use super::{Activation, MlpModel, ModelError, NormStats, TrainingSet, DEFAULT_LAYER_DIMS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingTarget {
    /// 1 when the task got no valid submission.
    #[default]
    TaskFailure,
    /// Failure rate of the platform on the task's arrival day.
    DayFailureRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Share of the training rows held back for early stopping.
    pub validation_fraction: f64,
    /// Share of the dataset kept out of cross-validation.
    pub holdout_fraction: f64,
    pub kfold_k: usize,
    pub seed: u64,
    pub hidden_activation: Activation,
    pub layer_dims: Vec<usize>,
    pub target: TrainingTarget,
    /// Fresh initializations tried when a trained network's output does
    /// not depend on its input.
    pub max_restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            max_epochs: 50,
            learning_rate: 0.01,
            momentum: 0.9,
            patience: 5,
            validation_fraction: 0.1,
            holdout_fraction: 0.2,
            kfold_k: 10,
            seed: 42,
            hidden_activation: Activation::Relu,
            layer_dims: DEFAULT_LAYER_DIMS.to_vec(),
            target: TrainingTarget::TaskFailure,
            max_restarts: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.max_epochs < 1 {
            return bad("max_epochs must be >= 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must be in [0, 1)");
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad("holdout_fraction must be in (0, 1)");
        }
        if self.kfold_k < 2 {
            return bad("kfold_k must be >= 2");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("need at least {needed} examples, got {got}")]
    TooFewExamples { needed: usize, got: usize },
    #[error("label {value} at row {row} is outside [0, 1]")]
    BadLabel { row: usize, value: f64 },
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when no validation slice was held back.
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub curve: Vec<EpochStats>,
    /// Epoch (1-based) whose weights were kept.
    pub best_epoch: usize,
    pub train_rows: Vec<usize>,
    pub validation_rows: Vec<usize>,
    /// Initializations discarded before this one.
    pub restarts: usize,
}

/// Indices split into (train, validation) by a seeded shuffle.
pub(crate) fn validation_split(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = if fraction > 0.0 {
        ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let val = idx.split_off(n - n_val);
    (idx, val)
}

pub(crate) fn mse(model: &MlpModel, rows: &[[f64; 4]], labels: &[f64]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let total: f64 = rows
        .iter()
        .zip(labels)
        .map(|(x, y)| (model.forward_normalized(x) - y).powi(2))
        .sum();
    total / rows.len() as f64
}

pub fn train(set: &TrainingSet, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let n = set.len();
    let needed = 2 * cfg.batch_size;
    if n < needed.max(2) {
        return Err(TrainError::TooFewExamples {
            needed: needed.max(2),
            got: n,
        });
    }
    for (row, &value) in set.labels.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(TrainError::BadLabel { row, value });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train_rows, validation_rows) = validation_split(n, cfg.validation_fraction, &mut rng);
    let norm = NormStats::fit(train_rows.iter().map(|&i| &set.features[i]));
    let xs: Vec<[f64; 4]> = set.features.iter().map(|f| norm.apply(f)).collect();

    // a network whose output ignores its input (dead ReLU layer) is
    // re-initialized; if every attempt is flat the lowest-loss one is kept
    let mut restarts = 0;
    let mut kept: Option<Fitted> = None;
    let (model, curve, best_epoch, _) = loop {
        let fitted = fit(set, cfg, &xs, &train_rows, &validation_rows, &norm, &mut rng)?;
        if output_spread(&fitted.0, &xs, &train_rows) >= FLAT_OUTPUT {
            break fitted;
        }
        if kept.as_ref().is_none_or(|k| fitted.3 < k.3) {
            kept = Some(fitted);
        }
        if restarts >= cfg.max_restarts {
            break kept.expect("at least one attempt");
        }
        restarts += 1;
    };
    Ok(TrainOutcome {
        model,
        curve,
        best_epoch,
        train_rows,
        validation_rows,
        restarts,
    })
}

/// Output range below which a network counts as constant.
const FLAT_OUTPUT: f64 = 1e-6;

fn output_spread(model: &MlpModel, xs: &[[f64; 4]], rows: &[usize]) -> f64 {
    let (lo, hi) = rows
        .iter()
        .map(|&i| model.forward_normalized(&xs[i]))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p), hi.max(p)));
    hi - lo
}

type Fitted = (MlpModel, Vec<EpochStats>, usize, f64);

fn fit(
    set: &TrainingSet,
    cfg: &TrainConfig,
    xs: &[[f64; 4]],
    train_rows: &[usize],
    validation_rows: &[usize],
    norm: &NormStats,
    rng: &mut ChaCha8Rng,
) -> Result<Fitted, TrainError> {
    let mut model = MlpModel::init(
        &cfg.layer_dims,
        cfg.hidden_activation,
        Activation::Sigmoid,
        rng,
        cfg.seed,
    )?;
    model.set_norm_stats(norm.clone());

    let val_x: Vec<[f64; 4]> = validation_rows.iter().map(|&i| xs[i]).collect();
    let val_y: Vec<f64> = validation_rows.iter().map(|&i| set.labels[i]).collect();

    let mut grads = Gradients::zero_like(&model);
    let mut velocity = Gradients::zero_like(&model);
    let mut trace = Trace::default();
    let mut order = train_rows.to_vec();

    let mut curve = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(f64, usize, MlpModel)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                loss_sum += model.accumulate(&xs[i], set.labels[i], scale, &mut grads, &mut trace);
            }
            model.step(&grads, &mut velocity, cfg.learning_rate, cfg.momentum);
        }
        let train_loss = loss_sum / order.len() as f64;
        if !train_loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        let val_loss = (!val_x.is_empty()).then(|| mse(&model, &val_x, &val_y));
        if val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(TrainError::Diverged { epoch });
        }
        curve.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });

        let Some(v) = val_loss else {
            best = Some((train_loss, epoch, model.clone()));
            continue;
        };
        match &best {
            Some((b, _, _)) if v >= *b => {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
            _ => {
                best = Some((v, epoch, model.clone()));
                since_best = 0;
            }
        }
    }

    let (loss, best_epoch, model) = best.expect("at least one epoch runs");
    Ok((model, curve, best_epoch, loss))
}
