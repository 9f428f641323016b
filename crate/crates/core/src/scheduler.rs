//! Greedy posting-day selection over the planned day and the two days
//! after it.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::platform::Pool;
use crate::predictor::{featurize, FeatureError, MlpModel};
use crate::similarity::PreparedTask;
use crate::task::{sort_by_planned_day, Day, TaskRecord};

/// Candidate offsets in days from the planned day.
pub const OFFSETS: [Day; 3] = [0, 1, 2];

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("offset {0} is outside 0..=2")]
    InvalidOffset(i64),
    #[error("all {0} tasks already decided")]
    Finished(usize),
    #[error("task {got} decided out of order, next is {expected}")]
    OutOfOrder { expected: String, got: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    /// Every task is evaluated against the unchanged pool.
    #[default]
    Static,
    /// Each committed decision moves the task in the pool seen by later
    /// tasks.
    Rolling,
}

impl std::str::FromStr for ScheduleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(ScheduleMode::Static),
            "rolling" => Ok(ScheduleMode::Rolling),
            other => Err(format!("unknown schedule mode `{other}` (static|rolling)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDecision {
    pub task_id: String,
    pub planned_day: Day,
    /// Predicted failure probability at offsets 0, 1 and 2.
    pub predictions: [f64; 3],
    pub recommended_offset: u8,
    pub chosen_offset: u8,
    pub chosen_day: Day,
}

impl ScheduleDecision {
    pub fn p_chosen(&self) -> f64 {
        self.predictions[self.chosen_offset as usize]
    }

    /// Same predictions with a different committed offset.
    pub fn with_choice(mut self, offset: u8) -> Result<Self, ScheduleError> {
        if offset > 2 {
            return Err(ScheduleError::InvalidOffset(offset.into()));
        }
        self.chosen_offset = offset;
        self.chosen_day = self.planned_day + Day::from(offset);
        Ok(self)
    }
}

/// Index of the smallest probability; ties go to the smaller offset.
pub fn argmin_offset(p: &[f64; 3]) -> u8 {
    let mut best = 0;
    for i in 1..3 {
        if p[i] < p[best] {
            best = i;
        }
    }
    best as u8
}

/// Predictions at the three offsets for `task` posted on `planned_day`,
/// with the argmin chosen.
pub fn recommend(
    pool: &Pool,
    model: &MlpModel,
    task: &TaskRecord,
    planned_day: Day,
) -> Result<ScheduleDecision, ScheduleError> {
    let placed = PreparedTask::new(task.shifted(planned_day - task.registration_start));
    let ctx = pool.arrival_context(&placed, planned_day);
    let round = pool.config().round_open_tasks;
    let mut predictions = [0.0; 3];
    for (p, &delta) in predictions.iter_mut().zip(&OFFSETS) {
        *p = model.forward(&featurize(&placed.record, &ctx, delta, round)?);
    }
    let offset = argmin_offset(&predictions);
    Ok(ScheduleDecision {
        task_id: task.task_id.clone(),
        planned_day,
        predictions,
        recommended_offset: offset,
        chosen_offset: offset,
        chosen_day: planned_day + Day::from(offset),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectSchedule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project_id: Option<String>,
    pub mode: ScheduleMode,
    pub decisions: Vec<ScheduleDecision>,
    /// Mean predicted failure with every task at offset 0.
    pub mean_before: f64,
    /// Mean predicted failure at the chosen offsets.
    pub mean_after: f64,
    pub makespan_before: Day,
    pub makespan_after: Day,
    /// Number of tasks committed at each offset.
    pub offset_counts: [usize; 3],
    /// Mean chosen probability among tasks committed at each offset.
    pub offset_means: [Option<f64>; 3],
}

/// Last submission end minus first registration start.
pub fn makespan(tasks: &[TaskRecord]) -> Day {
    let first = tasks.iter().map(|t| t.registration_start).min();
    let last = tasks.iter().map(|t| t.submission_end).max();
    match (first, last) {
        (Some(a), Some(b)) => b - a,
        _ => 0,
    }
}

fn summarize(
    project_id: Option<String>,
    mode: ScheduleMode,
    tasks: &[TaskRecord],
    decisions: Vec<ScheduleDecision>,
) -> ProjectSchedule {
    let n = decisions.len().max(1) as f64;
    let mean_before = decisions.iter().map(|d| d.predictions[0]).sum::<f64>() / n;
    let mean_after = decisions.iter().map(|d| d.p_chosen()).sum::<f64>() / n;
    let shifted: Vec<TaskRecord> = tasks
        .iter()
        .zip(&decisions)
        .map(|(t, d)| t.shifted(d.chosen_day - t.registration_start))
        .collect();
    let mut offset_counts = [0usize; 3];
    let mut sums = [0.0; 3];
    for d in &decisions {
        offset_counts[d.chosen_offset as usize] += 1;
        sums[d.chosen_offset as usize] += d.p_chosen();
    }
    let offset_means = std::array::from_fn(|i| (offset_counts[i] > 0).then(|| sums[i] / offset_counts[i] as f64));
    ProjectSchedule {
        project_id,
        mode,
        decisions,
        mean_before,
        mean_after,
        makespan_before: makespan(tasks),
        makespan_after: makespan(&shifted),
        offset_counts,
        offset_means,
    }
}

/// Greedy schedule of `tasks`, processed in planned-day order. Each
/// task's planned day is its registration start.
pub fn schedule_project(
    pool: &Pool,
    model: &MlpModel,
    tasks: &[TaskRecord],
    mode: ScheduleMode,
    exec: Execution,
) -> Result<ProjectSchedule, ScheduleError> {
    let mut tasks = tasks.to_vec();
    sort_by_planned_day(&mut tasks);
    let project_id = common_project(&tasks);
    let decisions = match mode {
        ScheduleMode::Static => exec
            .map(&tasks, |t| recommend(pool, model, t, t.registration_start))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?,
        ScheduleMode::Rolling => {
            let mut rolling = RollingSchedule::new(pool.clone(), tasks.clone());
            while !rolling.is_finished() {
                rolling.decide(model, None)?;
            }
            rolling.into_decisions()
        }
    };
    Ok(summarize(project_id, mode, &tasks, decisions))
}

fn common_project(tasks: &[TaskRecord]) -> Option<String> {
    let first = tasks.first()?.project_id.clone()?;
    tasks
        .iter()
        .all(|t| t.project_id.as_deref() == Some(first.as_str()))
        .then_some(first)
}

/// Sequential schedule driven one decision at a time. The pool is owned,
/// so separate schedules never share state.
#[derive(Debug, Clone)]
pub struct RollingSchedule {
    pool: Pool,
    tasks: Vec<TaskRecord>,
    decisions: Vec<ScheduleDecision>,
}

impl RollingSchedule {
    pub fn new(pool: Pool, mut tasks: Vec<TaskRecord>) -> Self {
        sort_by_planned_day(&mut tasks);
        RollingSchedule {
            pool,
            tasks,
            decisions: Vec::new(),
        }
    }

    pub fn cursor(&self) -> usize {
        self.decisions.len()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn is_finished(&self) -> bool {
        self.cursor() == self.tasks.len()
    }

    pub fn tasks(&self) -> &[TaskRecord] {
        &self.tasks
    }

    pub fn decisions(&self) -> &[ScheduleDecision] {
        &self.decisions
    }

    pub fn pool(&self) -> &Pool {
        &self.pool
    }

    /// Predictions for the task at the cursor under the current pool.
    pub fn next(&self, model: &MlpModel) -> Result<Option<ScheduleDecision>, ScheduleError> {
        match self.tasks.get(self.cursor()) {
            Some(t) => recommend(&self.pool, model, t, t.registration_start).map(Some),
            None => Ok(None),
        }
    }

    /// Commits the task at the cursor at `offset`, or at the argmin when
    /// `None`, and moves it in the pool.
    pub fn decide(&mut self, model: &MlpModel, offset: Option<u8>) -> Result<&ScheduleDecision, ScheduleError> {
        if let Some(o) = offset {
            if o > 2 {
                return Err(ScheduleError::InvalidOffset(o.into()));
            }
        }
        let Some(d) = self.next(model)? else {
            return Err(ScheduleError::Finished(self.tasks.len()));
        };
        let d = match offset {
            Some(o) => d.with_choice(o)?,
            None => d,
        };
        let task = &self.tasks[self.cursor()];
        self.pool.upsert(task.shifted(d.chosen_day - task.registration_start));
        self.decisions.push(d);
        Ok(self.decisions.last().expect("just pushed"))
    }

    /// Like [`RollingSchedule::decide`], but rejects a task id other
    /// than the one at the cursor.
    pub fn decide_task(
        &mut self,
        model: &MlpModel,
        task_id: &str,
        offset: Option<u8>,
    ) -> Result<&ScheduleDecision, ScheduleError> {
        match self.tasks.get(self.cursor()) {
            Some(t) if t.task_id != task_id => Err(ScheduleError::OutOfOrder {
                expected: t.task_id.clone(),
                got: task_id.to_string(),
            }),
            _ => self.decide(model, offset),
        }
    }

    pub fn into_decisions(self) -> Vec<ScheduleDecision> {
        self.decisions
    }

    /// Summary of the decisions committed so far.
    pub fn schedule(&self) -> ProjectSchedule {
        let n = self.cursor();
        let tasks = &self.tasks[..n];
        summarize(
            common_project(&self.tasks),
            ScheduleMode::Rolling,
            tasks,
            self.decisions.clone(),
        )
    }
}

/// Per-task rows: task_id, planned_day, p0, p1, p2, chosen_offset.
pub fn write_decisions_csv<W: Write>(decisions: &[ScheduleDecision], writer: W) -> Result<(), ScheduleError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["task_id", "planned_day", "p0", "p1", "p2", "chosen_offset"])?;
    for d in decisions {
        w.write_record([
            d.task_id.clone(),
            d.planned_day.to_string(),
            d.predictions[0].to_string(),
            d.predictions[1].to_string(),
            d.predictions[2].to_string(),
            d.chosen_offset.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Before/after probability per task, in schedule order.
pub fn write_probability_curve<W: Write>(schedule: &ProjectSchedule, writer: W) -> Result<(), ScheduleError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["index", "task_id", "p_before", "p_after"])?;
    for (i, d) in schedule.decisions.iter().enumerate() {
        w.write_record([
            i.to_string(),
            d.task_id.clone(),
            d.predictions[0].to_string(),
            d.p_chosen().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Original and shifted task intervals for a timeline chart.
pub fn write_timeline<W: Write>(
    tasks: &[TaskRecord],
    schedule: &ProjectSchedule,
    writer: W,
) -> Result<(), ScheduleError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["task_id", "start_before", "end_before", "start_after", "end_after"])?;
    for d in &schedule.decisions {
        let Some(t) = tasks.iter().find(|t| t.task_id == d.task_id) else {
            continue;
        };
        let shift = d.chosen_day - t.registration_start;
        w.write_record([
            d.task_id.clone(),
            t.registration_start.to_string(),
            t.submission_end.to_string(),
            (t.registration_start + shift).to_string(),
            (t.submission_end + shift).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
