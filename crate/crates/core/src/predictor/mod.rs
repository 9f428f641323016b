//! Failure predictor: features, the network, training, cross-validation
//! and gradient checking.

mod cv;
mod gradcheck;
mod mlp;
mod train;

pub use cv::{fold_seed, kfold_cv, CvError, CvPlan, CvReport};
pub use gradcheck::{gradient_check, GRADCHECK_FLOOR};
pub use mlp::{Activation, Gradients, MlpModel, ModelError, NormStats, DEFAULT_LAYER_DIMS, MODEL_FORMAT_VERSION};
pub use train::{train, EpochStats, TrainConfig, TrainError, TrainOutcome, TrainingTarget};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::platform::{ArrivalContext, Pool};
use crate::task::{Day, TaskRecord};

pub const FEATURE_COUNT: usize = 4;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = ["open_tasks", "avg_similarity", "prize", "duration"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub open_tasks: f64,
    pub avg_similarity: f64,
    pub prize: f64,
    pub duration: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [self.open_tasks, self.avg_similarity, self.prize, self.duration]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        FeatureVector {
            open_tasks: a[0],
            avg_similarity: a[1],
            prize: a[2],
            duration: a[3],
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        for (v, name) in self.to_array().iter().zip(FEATURE_NAMES) {
            if !v.is_finite() {
                return Err(FeatureError::NonFinite(name));
            }
            if *v < 0.0 {
                return Err(FeatureError::OutOfRange(name));
            }
        }
        if self.avg_similarity > 1.0 {
            return Err(FeatureError::OutOfRange("avg_similarity"));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("feature `{0}` is not finite")]
    NonFinite(&'static str),
    #[error("feature `{0}` is out of range")]
    OutOfRange(&'static str),
}

fn assemble(open_tasks: f64, avg_similarity: f64, task: &TaskRecord) -> Result<FeatureVector, FeatureError> {
    let fv = FeatureVector {
        open_tasks,
        avg_similarity,
        prize: task.actual_prize(),
        duration: task.duration() as f64,
    };
    fv.validate()?;
    Ok(fv)
}

/// Features on the arrival day itself.
pub fn featurize_current(task: &TaskRecord, ctx: &ArrivalContext) -> Result<FeatureVector, FeatureError> {
    assemble(ctx.open_count() as f64, ctx.avg_similarity(), task)
}

/// Features for posting `delta_days` after the context's day, from the
/// projected open-task count and similarity.
pub fn featurize(
    task: &TaskRecord,
    ctx: &ArrivalContext,
    delta_days: Day,
    round_open_tasks: bool,
) -> Result<FeatureVector, FeatureError> {
    let p = ctx.projection(delta_days);
    let open = if round_open_tasks {
        p.ot_fut.max(0.0).round()
    } else {
        p.ot_fut
    };
    assemble(open, p.ats_fut, task)
}

/// Inputs and targets for training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub features: Vec<FeatureVector>,
    pub labels: Vec<f64>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> TrainingSet {
        TrainingSet {
            features: idx.iter().map(|&i| self.features[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Arrival-day features of every task in the pool, in pool order.
pub fn featurize_pool(pool: &Pool, exec: Execution) -> Result<Vec<FeatureVector>, FeatureError> {
    exec.map(pool.tasks(), |t| {
        let ctx = pool.arrival_context(t, t.record.registration_start);
        featurize_current(&t.record, &ctx)
    })
    .into_iter()
    .collect()
}

/// Features and labels for every task in the pool.
pub fn training_set(pool: &Pool, target: TrainingTarget, exec: Execution) -> Result<TrainingSet, FeatureError> {
    let features = featurize_pool(pool, exec)?;
    let labels = pool
        .tasks()
        .iter()
        .map(|t| match target {
            TrainingTarget::TaskFailure => f64::from(u8::from(t.record.outcome().failed)),
            TrainingTarget::DayFailureRate => pool.failure_rate_on(t.record.registration_start),
        })
        .collect();
    Ok(TrainingSet { features, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::platform::PlatformConfig;
    use crate::similarity::{PreparedTask, SimilarityWeights};
    use crate::task::tests::task;
    use crate::task::Dataset;

    fn pool(tasks: Vec<TaskRecord>) -> Pool {
        Pool::new(
            &Dataset::new(tasks).unwrap(),
            &SimilarityWeights::uniform(),
            PlatformConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn clone_pool_of_one() {
        let a = task("a", 0, 5, 14);
        let mut c = a.clone();
        c.task_id = "c".into();
        let p = pool(vec![a.clone(), c]);
        let ctx = p.arrival_context(p.get("a").unwrap(), 0);
        let fv = featurize_current(&a, &ctx).unwrap();
        assert_eq!(
            fv,
            FeatureVector {
                open_tasks: 1.0,
                avg_similarity: 1.0,
                prize: 750.0,
                duration: 14.0
            }
        );
    }

    #[test]
    fn empty_pool() {
        let a = task("a", 0, 5, 14);
        let p = pool(vec![task("z", 20, 25, 30)]);
        let ctx = p.arrival_context(&PreparedTask::new(a.clone()), 0);
        let fv = featurize_current(&a, &ctx).unwrap();
        assert_eq!(fv.to_array(), [0.0, 0.0, 750.0, 14.0]);
    }

    #[test]
    fn zero_offset_matches_current() {
        let ts: Vec<TaskRecord> = (0..6)
            .map(|i| {
                let mut t = task(&format!("t{i}"), i, i + 4, i + 8);
                t.winner_prize = 100.0 * (i + 1) as f64;
                t.requirement_text = format!("word{} shared text", i % 3);
                t
            })
            .collect();
        let p = pool(ts);
        for t in p.tasks() {
            let ctx = p.arrival_context(t, t.record.registration_start);
            assert_eq!(
                featurize_current(&t.record, &ctx).unwrap(),
                featurize(&t.record, &ctx, 0, false).unwrap()
            );
        }
    }

    #[test]
    fn rejects_non_finite() {
        let fv = FeatureVector {
            open_tasks: f64::NAN,
            avg_similarity: 0.0,
            prize: 0.0,
            duration: 0.0,
        };
        assert_eq!(fv.validate(), Err(FeatureError::NonFinite("open_tasks")));
        let fv = FeatureVector {
            prize: f64::INFINITY,
            ..FeatureVector::from_array([0.0; 4])
        };
        assert_eq!(fv.validate(), Err(FeatureError::NonFinite("prize")));
    }
}
