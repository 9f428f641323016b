//! Day-indexed platform state: open tasks, average similarity of an
//! arriving task against them, arrival and failure rates, and the
//! projections used to evaluate posting one or two days later.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::similarity::{similarity_score, PreparedTask, SimilarityContext, SimilarityError, SimilarityWeights};
use crate::task::{Dataset, Day, TaskRecord};

/// How the per-day arrival rate is estimated from the open pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArrivalRateEstimator {
    /// Open-task count over the summed registration durations of the
    /// open tasks.
    #[default]
    PerDuration,
    /// Open-task count over the mean inclusive registration window
    /// (Little's law); tracks the true arrivals per day.
    LittlesLaw,
}

/// First term of the future open-task count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FutureOpenCount {
    /// Tasks open today that are still open on the future day.
    #[default]
    Survivors,
    /// Today's full open count.
    Current,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatformConfig {
    pub arrival_rate: ArrivalRateEstimator,
    pub future_open_count: FutureOpenCount,
    /// Round projected open-task counts before they become features.
    pub round_open_tasks: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FutureProjection {
    pub delta_days: Day,
    pub ot_fut: f64,
    pub ats_fut: f64,
}

impl FutureProjection {
    pub fn ot_fut_rounded(&self) -> u64 {
        self.ot_fut.max(0.0).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformSnapshot {
    pub day: Day,
    pub open_tasks: Vec<String>,
    pub not_d: usize,
    pub ats_d: f64,
    pub ta_d: f64,
    pub tf_d: f64,
    pub projections: Vec<FutureProjection>,
}

/// Normalized blend of survivors' similarity with arrivals assumed to
/// carry today's average similarity.
pub fn blend_future_similarity(n_surv: f64, ats_surv: f64, ta_d: f64, delta_days: Day, ats_d: f64) -> f64 {
    let arrivals = ta_d * delta_days as f64;
    if arrivals == 0.0 {
        return ats_surv;
    }
    let denom = n_surv + arrivals;
    if denom <= 0.0 {
        return 0.0;
    }
    ((n_surv * ats_surv + arrivals * ats_d) / denom).clamp(0.0, 1.0)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// The tasks known to the platform together with the similarity
/// normalization and weights. Rolling schedules mutate a private copy
/// through [`Pool::upsert`].
#[derive(Debug, Clone)]
pub struct Pool {
    tasks: Vec<PreparedTask>,
    index: HashMap<String, usize>,
    ctx: SimilarityContext,
    weights: SimilarityWeights,
    config: PlatformConfig,
}

impl Pool {
    pub fn new(
        dataset: &Dataset,
        weights: &SimilarityWeights,
        config: PlatformConfig,
    ) -> Result<Self, SimilarityError> {
        let ctx = SimilarityContext::from_tasks(dataset.tasks());
        Self::with_context(dataset.tasks().iter().cloned(), ctx, weights, config)
    }

    pub fn with_context(
        tasks: impl IntoIterator<Item = TaskRecord>,
        ctx: SimilarityContext,
        weights: &SimilarityWeights,
        config: PlatformConfig,
    ) -> Result<Self, SimilarityError> {
        let weights = weights.normalized()?;
        let mut pool = Pool {
            tasks: Vec::new(),
            index: HashMap::new(),
            ctx,
            weights,
            config,
        };
        for t in tasks {
            pool.upsert(t);
        }
        Ok(pool)
    }

    /// Inserts a task, or replaces the record with the same id in place.
    pub fn upsert(&mut self, task: TaskRecord) {
        let prepared = PreparedTask::new(task);
        match self.index.get(&prepared.record.task_id) {
            Some(&i) => self.tasks[i] = prepared,
            None => {
                self.index.insert(prepared.record.task_id.clone(), self.tasks.len());
                self.tasks.push(prepared);
            }
        }
    }

    pub fn tasks(&self) -> &[PreparedTask] {
        &self.tasks
    }

    pub fn get(&self, task_id: &str) -> Option<&PreparedTask> {
        self.index.get(task_id).map(|&i| &self.tasks[i])
    }

    pub fn context(&self) -> &SimilarityContext {
        &self.ctx
    }

    pub fn weights(&self) -> &SimilarityWeights {
        &self.weights
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    /// Tasks with `TR <= day <= TRE`, skipping `exclude`.
    pub fn open_tasks_on<'a>(
        &'a self,
        day: Day,
        exclude: Option<&'a str>,
    ) -> impl Iterator<Item = &'a PreparedTask> + 'a {
        self.tasks
            .iter()
            .filter(move |t| t.record.is_open_on(day) && Some(t.record.task_id.as_str()) != exclude)
    }

    pub fn open_count_on(&self, day: Day, exclude: Option<&str>) -> usize {
        self.open_tasks_on(day, exclude).count()
    }

    /// Share of tasks open on `day` that never receive a valid submission.
    pub fn failure_rate_on(&self, day: Day) -> f64 {
        let (mut open, mut ok) = (0usize, 0usize);
        for t in self.open_tasks_on(day, None) {
            open += 1;
            if t.record.valid_submissions >= 1 {
                ok += 1;
            }
        }
        if open == 0 {
            0.0
        } else {
            1.0 - ok as f64 / open as f64
        }
    }

    pub fn arrival_rate_on(&self, day: Day, exclude: Option<&str>) -> f64 {
        arrival_rate(
            self.config.arrival_rate,
            self.open_tasks_on(day, exclude).map(|t| &t.record),
        )
    }

    pub fn avg_similarity_on<'a>(
        &self,
        arriving: &PreparedTask,
        open: impl IntoIterator<Item = &'a PreparedTask>,
    ) -> f64 {
        mean(
            open.into_iter()
                .map(|j| similarity_score(arriving, j, &self.weights, &self.ctx)),
        )
    }

    /// Open tasks and their similarity to `arriving` on `day`, reused
    /// for every lookahead offset.
    pub fn arrival_context(&self, arriving: &PreparedTask, day: Day) -> ArrivalContext {
        let exclude = Some(arriving.record.task_id.as_str());
        let mut open = Vec::new();
        for t in self.open_tasks_on(day, exclude) {
            open.push(OpenEntry {
                registration_end: t.record.registration_end,
                similarity: similarity_score(arriving, t, &self.weights, &self.ctx),
            });
        }
        let ta_d = arrival_rate(
            self.config.arrival_rate,
            self.open_tasks_on(day, exclude).map(|t| &t.record),
        );
        ArrivalContext {
            day,
            open,
            ta_d,
            config: self.config,
        }
    }

    pub fn project_open_tasks(&self, arriving: &PreparedTask, day: Day, delta_days: Day) -> f64 {
        self.arrival_context(arriving, day).projection(delta_days).ot_fut
    }

    pub fn project_avg_similarity(&self, arriving: &PreparedTask, day: Day, delta_days: Day) -> f64 {
        self.arrival_context(arriving, day).projection(delta_days).ats_fut
    }

    /// Snapshot of `day`. With an arriving task the similarity figures
    /// are against that task; without one they are the mean pairwise
    /// similarity among the open tasks themselves.
    pub fn snapshot(&self, day: Day, arriving: Option<&PreparedTask>) -> PlatformSnapshot {
        let exclude = arriving.map(|a| a.record.task_id.as_str());
        let open_tasks: Vec<String> = self
            .open_tasks_on(day, exclude)
            .map(|t| t.record.task_id.clone())
            .collect();
        let tf_d = self.failure_rate_on(day);
        match arriving {
            Some(a) => {
                let ctx = self.arrival_context(a, day);
                PlatformSnapshot {
                    day,
                    not_d: ctx.open_count(),
                    ats_d: ctx.avg_similarity(),
                    ta_d: ctx.ta_d,
                    tf_d,
                    projections: vec![ctx.projection(1), ctx.projection(2)],
                    open_tasks,
                }
            }
            None => {
                let open: Vec<&PreparedTask> = self.open_tasks_on(day, None).collect();
                let ta_d = arrival_rate(self.config.arrival_rate, open.iter().map(|t| &t.record));
                let ats_d = self.cohesion(&open);
                let projections = [1, 2]
                    .into_iter()
                    .map(|delta| {
                        let surv: Vec<&PreparedTask> = open
                            .iter()
                            .copied()
                            .filter(|t| t.record.registration_end >= day + delta)
                            .collect();
                        let base = match self.config.future_open_count {
                            FutureOpenCount::Survivors => surv.len(),
                            FutureOpenCount::Current => open.len(),
                        } as f64;
                        FutureProjection {
                            delta_days: delta,
                            ot_fut: base + ta_d * delta as f64,
                            ats_fut: blend_future_similarity(
                                surv.len() as f64,
                                self.cohesion(&surv),
                                ta_d,
                                delta,
                                ats_d,
                            ),
                        }
                    })
                    .collect();
                PlatformSnapshot {
                    day,
                    not_d: open.len(),
                    ats_d,
                    ta_d,
                    tf_d,
                    projections,
                    open_tasks,
                }
            }
        }
    }

    fn cohesion(&self, tasks: &[&PreparedTask]) -> f64 {
        let mut scores = Vec::new();
        for (i, a) in tasks.iter().enumerate() {
            for b in &tasks[i + 1..] {
                scores.push(similarity_score(a, b, &self.weights, &self.ctx));
            }
        }
        mean(scores.into_iter())
    }
}

fn arrival_rate<'a>(estimator: ArrivalRateEstimator, open: impl Iterator<Item = &'a TaskRecord>) -> f64 {
    let (mut n, mut total) = (0usize, 0i64);
    for t in open {
        n += 1;
        total += match estimator {
            ArrivalRateEstimator::PerDuration => t.registration_days(),
            ArrivalRateEstimator::LittlesLaw => t.registration_days() + 1,
        };
    }
    if n == 0 {
        return 0.0;
    }
    let total = total.max(1) as f64;
    match estimator {
        ArrivalRateEstimator::PerDuration => n as f64 / total,
        ArrivalRateEstimator::LittlesLaw => (n as f64) * (n as f64) / total,
    }
}

/// Tasks per day over the span of registration starts.
pub fn dataset_arrival_rate(dataset: &Dataset) -> f64 {
    let lo = dataset.tasks().iter().map(|t| t.registration_start).min().unwrap_or(0);
    let hi = dataset.tasks().iter().map(|t| t.registration_start).max().unwrap_or(0);
    dataset.len() as f64 / (hi - lo + 1) as f64
}

#[derive(Debug, Clone, Copy)]
struct OpenEntry {
    registration_end: Day,
    similarity: f64,
}

/// Platform state as seen by one arriving task on one day.
#[derive(Debug, Clone)]
pub struct ArrivalContext {
    day: Day,
    open: Vec<OpenEntry>,
    ta_d: f64,
    config: PlatformConfig,
}

impl ArrivalContext {
    pub fn day(&self) -> Day {
        self.day
    }

    pub fn open_count(&self) -> usize {
        self.open.len()
    }

    pub fn avg_similarity(&self) -> f64 {
        mean(self.open.iter().map(|e| e.similarity))
    }

    pub fn arrival_rate(&self) -> f64 {
        self.ta_d
    }

    pub fn projection(&self, delta_days: Day) -> FutureProjection {
        let horizon = self.day + delta_days;
        let survivors = || self.open.iter().filter(move |e| e.registration_end >= horizon);
        let n_surv = survivors().count();
        let ats_surv = mean(survivors().map(|e| e.similarity));
        let base = match self.config.future_open_count {
            FutureOpenCount::Survivors => n_surv,
            FutureOpenCount::Current => self.open.len(),
        } as f64;
        let ats_d = self.avg_similarity();
        FutureProjection {
            delta_days,
            ot_fut: base + self.ta_d * delta_days as f64,
            ats_fut: blend_future_similarity(n_surv as f64, ats_surv, self.ta_d, delta_days, ats_d),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::tests::task;

    fn pool(tasks: Vec<TaskRecord>) -> Pool {
        Pool::new(
            &Dataset::new(tasks).unwrap(),
            &SimilarityWeights::uniform(),
            PlatformConfig::default(),
        )
        .unwrap()
    }

    fn ids(p: &Pool, day: Day) -> Vec<String> {
        p.open_tasks_on(day, None).map(|t| t.record.task_id.clone()).collect()
    }

    #[test]
    fn open_tasks_by_interval() {
        let p = pool(vec![task("a", 0, 5, 6), task("b", 2, 4, 6), task("c", 6, 9, 10)]);
        assert!(ids(&p, -1).is_empty());
        assert_eq!(ids(&p, 3), vec!["a", "b"]);
        assert_eq!(ids(&p, 6), vec!["c"]);
    }

    #[test]
    fn avg_similarity_conventions() {
        let a = task("a", 0, 5, 6);
        let p = pool(vec![a.clone()]);
        let arriving = PreparedTask::new(a.clone());
        assert_eq!(p.avg_similarity_on(&arriving, std::iter::empty()), 0.0);
        let mut clone = a;
        clone.task_id = "clone".into();
        let p2 = pool(vec![clone]);
        assert_eq!(p2.avg_similarity_on(&arriving, p2.tasks()), 1.0);
    }

    #[test]
    fn failure_rate_counts() {
        let mut ts: Vec<TaskRecord> = (0..4).map(|i| task(&format!("t{i}"), 0, 3, 4)).collect();
        for t in ts.iter_mut().skip(1) {
            t.valid_submissions = 0;
        }
        let p = pool(ts.clone());
        assert_eq!(p.failure_rate_on(1), 0.75);
        assert_eq!(p.failure_rate_on(10), 0.0);
        for t in ts.iter_mut() {
            t.valid_submissions = 0;
        }
        assert_eq!(pool(ts.clone()).failure_rate_on(1), 1.0);
        for t in ts.iter_mut() {
            t.valid_submissions = 1;
        }
        assert_eq!(pool(ts).failure_rate_on(1), 0.0);
    }

    #[test]
    fn arrival_rate_ratios() {
        let ts: Vec<TaskRecord> = (0..10).map(|i| task(&format!("t{i}"), 0, 5, 6)).collect();
        assert_eq!(pool(ts).arrival_rate_on(1, None), 0.2);
        assert_eq!(pool(vec![task("a", 0, 7, 8)]).arrival_rate_on(0, None), 1.0 / 7.0);
        assert_eq!(pool(vec![task("a", 0, 7, 8)]).arrival_rate_on(9, None), 0.0);
        // zero-length windows floor the denominator at one day
        assert_eq!(pool(vec![task("a", 3, 3, 8)]).arrival_rate_on(3, None), 1.0);
    }

    #[test]
    fn littles_law_estimator() {
        let ts: Vec<TaskRecord> = (0..10).map(|i| task(&format!("t{i}"), 0, 4, 6)).collect();
        let cfg = PlatformConfig {
            arrival_rate: ArrivalRateEstimator::LittlesLaw,
            ..Default::default()
        };
        let p = Pool::new(&Dataset::new(ts).unwrap(), &SimilarityWeights::uniform(), cfg).unwrap();
        assert_eq!(p.arrival_rate_on(1, None), 2.0);
    }

    #[test]
    fn projection_counts() {
        let arriving = PreparedTask::new(task("new", 5, 8, 10));
        let single = pool(vec![task("a", 0, 6, 7)]);
        let ctx = single.arrival_context(&arriving, 5);
        assert_eq!(ctx.projection(0).ot_fut, 1.0);
        // closes tomorrow; per-duration rate is 1/6
        assert_eq!(ctx.projection(2).ot_fut, 2.0 / 6.0);
        assert_eq!(ctx.projection(2).ot_fut_rounded(), 0);
    }

    #[test]
    fn future_count_arithmetic() {
        let p = FutureProjection {
            delta_days: 2,
            ot_fut: 100.0 + 13.0 * 2.0,
            ats_fut: 0.0,
        };
        assert_eq!(p.ot_fut_rounded(), 126);
    }

    #[test]
    fn blend_examples() {
        let v = blend_future_similarity(4.0, 0.6, 2.0, 1, 0.8);
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(blend_future_similarity(4.0, 0.6, 0.0, 2, 0.8), 0.6);
        assert_eq!(blend_future_similarity(0.0, 0.0, 0.0, 2, 0.8), 0.0);
        assert_eq!(blend_future_similarity(0.0, 0.0, 1.0, 2, 0.8), 0.8);
    }

    #[test]
    fn snapshot_without_arriving_task() {
        let p = pool(vec![task("a", 0, 5, 6), task("b", 0, 1, 6), task("c", 0, 5, 6)]);
        let s = p.snapshot(1, None);
        assert_eq!(s.not_d, 3);
        assert!((0.0..=1.0).contains(&s.ats_d));
        assert_eq!(s.projections.len(), 2);
        assert!(s.projections[0].ot_fut >= 2.0);
    }

    #[test]
    fn upsert_replaces_in_place() {
        let mut p = pool(vec![task("a", 0, 5, 6), task("b", 0, 5, 6)]);
        p.upsert(task("a", 2, 7, 8));
        assert_eq!(p.tasks().len(), 2);
        assert_eq!(p.get("a").unwrap().record.registration_start, 2);
        p.upsert(task("z", 0, 1, 1));
        assert_eq!(p.tasks().len(), 3);
    }
}
