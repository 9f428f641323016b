//! Runs the network and the reference predictors through the same folds
//! and scores their pooled out-of-fold predictions.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::baselines::{constant_mean, moving_average_predict, LinearModel};
use super::metrics::{compute_metrics, MetricReport};
use super::{EvalConfig, EvalError};
use crate::exec::Execution;
use crate::predictor::{fold_seed, train, CvPlan, TrainConfig, TrainingSet};
use crate::task::Day;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    Network,
    LinearRegression,
    MovingAverage,
    ConstantMean,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 4] = [
        PredictorKind::Network,
        PredictorKind::LinearRegression,
        PredictorKind::MovingAverage,
        PredictorKind::ConstantMean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PredictorKind::Network => "network",
            PredictorKind::LinearRegression => "linear-regression",
            PredictorKind::MovingAverage => "moving-average",
            PredictorKind::ConstantMean => "constant-mean",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorScore {
    pub predictor: PredictorKind,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub k: usize,
    pub rows: usize,
    pub scores: Vec<PredictorScore>,
}

impl ComparisonReport {
    pub fn get(&self, kind: PredictorKind) -> Option<&MetricReport> {
        self.scores.iter().find(|s| s.predictor == kind).map(|s| &s.metrics)
    }
}

struct FoldPredictions {
    rows: Vec<usize>,
    by_kind: [Vec<f64>; 4],
}

/// Out-of-fold predictions of every predictor over the cross-validation
/// group. `days` holds the arrival day of each row, used as the time
/// axis of the moving average.
pub fn compare_predictors(
    set: &TrainingSet,
    days: &[Day],
    train_cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    exec: Execution,
) -> Result<ComparisonReport, EvalError> {
    if days.len() != set.len() || set.features.len() != set.len() {
        return Err(EvalError::Mismatch(format!(
            "{} features, {} labels, {} days",
            set.features.len(),
            set.len(),
            days.len()
        )));
    }
    train_cfg.validate()?;
    let plan = CvPlan::new(set.len(), train_cfg.holdout_fraction, train_cfg.kfold_k, train_cfg.seed)?;

    let folds = exec.map_range(plan.k(), |f| -> Result<FoldPredictions, EvalError> {
        let train_rows = plan.fold_train(f);
        let test_rows = plan.folds[f].clone();
        let train_set = set.subset(&train_rows);
        let test_x: Vec<_> = test_rows.iter().map(|&i| set.features[i]).collect();

        let fold_cfg = TrainConfig {
            seed: fold_seed(train_cfg.seed, f),
            ..train_cfg.clone()
        };
        let net = train(&train_set, &fold_cfg)?.model;
        let network = test_x.iter().map(|x| net.forward(x)).collect();

        let linear = LinearModel::fit(&train_set.features, &train_set.labels)?;
        let linear = test_x.iter().map(|x| linear.predict(x)).collect();

        let history: Vec<(Day, f64)> = train_rows.iter().map(|&i| (days[i], set.labels[i])).collect();
        let queries: Vec<Day> = test_rows.iter().map(|&i| days[i]).collect();
        let c = constant_mean(&train_set.labels);
        let moving = moving_average_predict(&history, &queries, eval_cfg.moving_average_window, c);

        let constant = vec![c; test_rows.len()];
        Ok(FoldPredictions {
            rows: test_rows,
            by_kind: [network, linear, moving, constant],
        })
    });
    let folds: Vec<FoldPredictions> = folds.into_iter().collect::<Result<_, _>>()?;

    let mut scores = Vec::with_capacity(PredictorKind::ALL.len());
    for (k, kind) in PredictorKind::ALL.into_iter().enumerate() {
        let pairs: Vec<(f64, f64)> = folds
            .iter()
            .flat_map(|f| f.rows.iter().zip(&f.by_kind[k]).map(|(&i, &p)| (p, set.labels[i])))
            .collect();
        scores.push(PredictorScore {
            predictor: kind,
            metrics: compute_metrics(&pairs, &eval_cfg.pred_thresholds)?,
        });
    }
    Ok(ComparisonReport {
        k: plan.k(),
        rows: plan.group.len(),
        scores,
    })
}

/// One row per predictor: MSE, median and std of squared errors,
/// accuracy, then one Pred column per threshold.
pub fn write_comparison_csv<W: Write>(report: &ComparisonReport, writer: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    let thresholds: Vec<f64> = report
        .scores
        .first()
        .map(|s| s.metrics.pred_n.iter().map(|p| p.threshold).collect())
        .unwrap_or_default();
    let mut header = vec![
        "predictor".to_string(),
        "mse".into(),
        "md_mse".into(),
        "std_mse".into(),
        "accuracy".into(),
    ];
    header.extend(thresholds.iter().map(|t| format!("pred_{t}")));
    w.write_record(&header)?;
    for s in &report.scores {
        let m = &s.metrics;
        let mut row = vec![
            s.predictor.name().to_string(),
            m.mse.to_string(),
            m.md_mse.to_string(),
            m.std_mse.to_string(),
            m.accuracy.to_string(),
        ];
        row.extend(m.pred_n.iter().map(|p| p.fraction.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::FeatureVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize) -> (TrainingSet, Vec<Day>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let features: Vec<FeatureVector> = (0..n)
            .map(|_| FeatureVector::from_array([rng.random_range(0.0..10.0), rng.random(), 500.0, 7.0]))
            .collect();
        let labels = features
            .iter()
            .map(|f| f64::from(u8::from(f.open_tasks > 5.0)))
            .collect();
        let days = (0..n as Day).map(|i| i / 10).collect();
        (TrainingSet { features, labels }, days)
    }

    #[test]
    fn all_predictors_scored_on_same_rows() {
        let (set, days) = data(200);
        let cfg = TrainConfig {
            kfold_k: 4,
            max_epochs: 5,
            ..Default::default()
        };
        let r = compare_predictors(&set, &days, &cfg, &EvalConfig::default(), Execution::Sequential).unwrap();
        assert_eq!(r.scores.len(), 4);
        assert!(r.scores.iter().all(|s| s.metrics.n == r.rows));
        let mut buf = Vec::new();
        write_comparison_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("predictor,mse,md_mse,std_mse,accuracy,pred_0.01,pred_0.05"));
    }

    #[test]
    fn length_mismatch() {
        let (set, days) = data(50);
        let r = compare_predictors(
            &set,
            &days[..10],
            &TrainConfig::default(),
            &EvalConfig::default(),
            Execution::Sequential,
        );
        assert!(matches!(r, Err(EvalError::Mismatch(_))));
    }
}
