//! Holdout split plus K-fold cross-validation on the remaining group.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::train::mse;
use super::{train, TrainConfig, TrainError, TrainingSet};
use crate::exec::Execution;

#[derive(Debug, Error)]
pub enum CvError {
    #[error("dataset too small for {k} folds: group of {group} rows, need at least {needed}")]
    TooSmall { k: usize, group: usize, needed: usize },
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: TrainError,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Derives the seed of fold `fold` from the master seed (splitmix64).
pub fn fold_seed(master: u64, fold: usize) -> u64 {
    let mut z = master.wrapping_add((fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Row assignment for the holdout split and the folds. Depends only on
/// the row count, the fractions and the seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvPlan {
    pub group: Vec<usize>,
    pub holdout: Vec<usize>,
    pub folds: Vec<Vec<usize>>,
}

impl CvPlan {
    pub fn new(n: usize, holdout_fraction: f64, k: usize, seed: u64) -> Result<Self, CvError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let n_hold = ((n as f64) * holdout_fraction).round() as usize;
        let n_hold = n_hold.min(n);
        let holdout = idx.split_off(n - n_hold);
        let group = idx;
        if k < 2 || group.len() < k {
            return Err(CvError::TooSmall {
                k,
                group: group.len(),
                needed: k.max(2),
            });
        }
        let (base, extra) = (group.len() / k, group.len() % k);
        let mut folds = Vec::with_capacity(k);
        let mut start = 0;
        for f in 0..k {
            let len = base + usize::from(f < extra);
            folds.push(group[start..start + len].to_vec());
            start += len;
        }
        Ok(CvPlan { group, holdout, folds })
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Group rows outside fold `f`.
    pub fn fold_train(&self, f: usize) -> Vec<usize> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, rows)| rows.iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub group_size: usize,
    pub holdout_size: usize,
    pub fold_losses: Vec<f64>,
    pub fold_best_epochs: Vec<usize>,
    pub mean_loss: f64,
    /// Population standard deviation of the fold losses.
    pub std_loss: f64,
    /// Loss on the holdout rows of a model trained on the whole group.
    pub holdout_loss: f64,
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn eval_loss(set: &TrainingSet, rows: &[usize], model: &super::MlpModel) -> f64 {
    let x: Vec<[f64; 4]> = rows
        .iter()
        .map(|&i| model.norm_stats().apply(&set.features[i]))
        .collect();
    let y: Vec<f64> = rows.iter().map(|&i| set.labels[i]).collect();
    mse(model, &x, &y)
}

pub fn kfold_cv(set: &TrainingSet, cfg: &TrainConfig, exec: Execution) -> Result<CvReport, CvError> {
    cfg.validate()?;
    let plan = CvPlan::new(set.len(), cfg.holdout_fraction, cfg.kfold_k, cfg.seed)?;
    let min_train = plan.group.len() - plan.folds.iter().map(Vec::len).max().unwrap_or(0);
    if min_train < 2 * cfg.batch_size {
        return Err(CvError::TooSmall {
            k: cfg.kfold_k,
            group: plan.group.len(),
            needed: plan.group.len() - min_train + 2 * cfg.batch_size,
        });
    }

    // fold index k trains on the whole group for the holdout estimate
    let runs = exec.map_range(plan.k() + 1, |f| {
        let (train_rows, test_rows) = if f < plan.k() {
            (plan.fold_train(f), plan.folds[f].clone())
        } else {
            (plan.group.clone(), plan.holdout.clone())
        };
        let fold_cfg = TrainConfig {
            seed: fold_seed(cfg.seed, f),
            ..cfg.clone()
        };
        train(&set.subset(&train_rows), &fold_cfg)
            .map(|out| (eval_loss(set, &test_rows, &out.model), out.best_epoch))
            .map_err(|source| CvError::Fold { fold: f, source })
    });
    let runs: Vec<(f64, usize)> = runs.into_iter().collect::<Result<_, _>>()?;
    let (holdout_loss, _) = runs[plan.k()];
    let fold_losses: Vec<f64> = runs[..plan.k()].iter().map(|r| r.0).collect();
    let fold_best_epochs = runs[..plan.k()].iter().map(|r| r.1).collect();
    let (mean_loss, std_loss) = mean_std(&fold_losses);
    Ok(CvReport {
        k: plan.k(),
        group_size: plan.group.len(),
        holdout_size: plan.holdout.len(),
        fold_losses,
        fold_best_epochs,
        mean_loss,
        std_loss,
        holdout_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::FeatureVector;
    use rand::Rng;

    #[test]
    fn nested_split_arithmetic() {
        let plan = CvPlan::new(100, 0.2, 10, 9).unwrap();
        assert_eq!(plan.group.len(), 80);
        assert_eq!(plan.holdout.len(), 20);
        for f in 0..10 {
            assert_eq!(plan.folds[f].len(), 8);
            assert_eq!(plan.fold_train(f).len(), 72);
        }
        let mut all: Vec<usize> = plan.group.iter().chain(&plan.holdout).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn assignment_depends_only_on_seed_and_size() {
        assert_eq!(CvPlan::new(57, 0.2, 5, 3).unwrap(), CvPlan::new(57, 0.2, 5, 3).unwrap());
        assert_ne!(CvPlan::new(57, 0.2, 5, 3).unwrap(), CvPlan::new(57, 0.2, 5, 4).unwrap());
    }

    #[test]
    fn uneven_folds_cover_group() {
        let plan = CvPlan::new(33, 0.2, 4, 1).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        assert_eq!(sizes.iter().sum::<usize>(), plan.group.len());
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn too_small() {
        assert!(matches!(CvPlan::new(5, 0.2, 10, 1), Err(CvError::TooSmall { .. })));
        let set = TrainingSet {
            features: vec![FeatureVector::from_array([1.0; 4]); 20],
            labels: vec![0.0; 20],
        };
        assert!(matches!(
            kfold_cv(&set, &TrainConfig::default(), Execution::Sequential),
            Err(CvError::TooSmall { .. })
        ));
    }

    #[test]
    fn report_is_consistent_and_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let features: Vec<FeatureVector> = (0..200)
            .map(|_| FeatureVector::from_array([rng.random_range(0.0..10.0), rng.random(), 500.0, 7.0]))
            .collect();
        let labels = features.iter().map(|f| f.avg_similarity).collect();
        let set = TrainingSet { features, labels };
        let cfg = TrainConfig {
            kfold_k: 4,
            max_epochs: 5,
            ..Default::default()
        };
        let a = kfold_cv(&set, &cfg, Execution::Sequential).unwrap();
        let b = kfold_cv(&set, &cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fold_losses.len(), 4);
        let (m, s) = mean_std(&a.fold_losses);
        assert_eq!((m, s), (a.mean_loss, a.std_loss));
    }

    #[test]
    fn fold_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..11).map(|f| fold_seed(42, f)).collect();
        assert_eq!(seeds.len(), 11);
    }
}
