//! Task records, datasets, and the on-disk CSV/JSON formats.
//!
//! Dates are integer day indices relative to the dataset epoch. All
//! records are validated on load and immutable afterwards.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Day index relative to the dataset epoch.
pub type Day = i64;

/// Column order of the canonical CSV format.
pub const CSV_COLUMNS: [&str; 13] = [
    "task_id",
    "registration_start",
    "registration_end",
    "submission_end",
    "winner_prize",
    "runnerup_prize",
    "task_type",
    "technologies",
    "platform_count",
    "registrations",
    "submissions",
    "valid_submissions",
    "requirement_text",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}{}: {message}", field.as_ref().map(|f| format!(", field `{f}`")).unwrap_or_default())]
    Parse {
        line: u64,
        field: Option<String>,
        message: String,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("task `{task_id}` violates invariant: {reason}")]
    Invariant { task_id: String, reason: String },
    #[error("duplicate task_id `{0}`")]
    DuplicateId(String),
    #[error("dataset is empty")]
    Empty,
    #[error("unknown dataset format for `{0}` (expected .csv or .json)")]
    UnknownFormat(String),
}

/// One crowdsourced task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub registration_start: Day,
    pub registration_end: Day,
    pub submission_end: Day,
    pub winner_prize: f64,
    #[serde(default)]
    pub runnerup_prize: f64,
    pub task_type: String,
    #[serde(default)]
    pub technologies: BTreeSet<String>,
    pub platform_count: u32,
    pub registrations: u32,
    pub submissions: u32,
    pub valid_submissions: u32,
    #[serde(default)]
    pub requirement_text: String,
    /// Owning project, when known. Not part of the canonical column set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project_id: Option<String>,
    /// Client-cancelled task. Kept unless ingestion asks to drop them.
    #[serde(default, skip_serializing_if = "is_false")]
    pub cancelled: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Derived outcome used as the training label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub failed: bool,
}

impl TaskRecord {
    /// Days from registration start to submission end.
    pub fn duration(&self) -> Day {
        self.submission_end - self.registration_start
    }

    /// Winner prize plus runner-up prize.
    pub fn actual_prize(&self) -> f64 {
        self.winner_prize + self.runnerup_prize
    }

    /// Length of the registration window in days (`TRE - TR`).
    pub fn registration_days(&self) -> Day {
        self.registration_end - self.registration_start
    }

    pub fn outcome(&self) -> TaskOutcome {
        TaskOutcome {
            failed: self.valid_submissions == 0,
        }
    }

    /// Whether the task accepts registrations on `day`.
    pub fn is_open_on(&self, day: Day) -> bool {
        self.registration_start <= day && day <= self.registration_end
    }

    /// Same task with every date moved by `days`.
    pub fn shifted(&self, days: Day) -> TaskRecord {
        TaskRecord {
            registration_start: self.registration_start + days,
            registration_end: self.registration_end + days,
            submission_end: self.submission_end + days,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let fail = |reason: String| {
            Err(DatasetError::Invariant {
                task_id: self.task_id.clone(),
                reason,
            })
        };
        if self.task_id.is_empty() {
            return fail("empty task_id".into());
        }
        if self.registration_start < 0 {
            return fail(format!("registration_start {} is negative", self.registration_start));
        }
        if self.registration_start > self.registration_end {
            return fail(format!(
                "registration_start {} > registration_end {}",
                self.registration_start, self.registration_end
            ));
        }
        if self.registration_end > self.submission_end {
            return fail(format!(
                "registration_end {} > submission_end {}",
                self.registration_end, self.submission_end
            ));
        }
        if !(self.winner_prize.is_finite() && self.winner_prize >= 0.0) {
            return fail(format!("winner_prize {} is not >= 0", self.winner_prize));
        }
        if !(self.runnerup_prize.is_finite() && self.runnerup_prize >= 0.0) {
            return fail(format!("runnerup_prize {} is not >= 0", self.runnerup_prize));
        }
        if self.valid_submissions > self.submissions {
            return fail(format!(
                "valid_submissions {} > submissions {}",
                self.valid_submissions, self.submissions
            ));
        }
        if self.submissions > self.registrations {
            return fail(format!(
                "submissions {} > registrations {}",
                self.submissions, self.registrations
            ));
        }
        Ok(())
    }
}

/// Total available time of a task.
pub fn task_duration(t: &TaskRecord) -> Day {
    t.duration()
}

/// Prize actually paid out.
pub fn actual_prize(t: &TaskRecord) -> f64 {
    t.actual_prize()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Csv,
    Json,
}

impl DatasetFormat {
    pub fn from_path(path: &Path) -> Result<Self, DatasetError> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("csv") => Ok(DatasetFormat::Csv),
            Some("json") => Ok(DatasetFormat::Json),
            _ => Err(DatasetError::UnknownFormat(path.display().to_string())),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Drop records flagged `cancelled` before validation.
    pub exclude_cancelled: bool,
    /// Calendar date of day index 0. Files carry day indices only.
    pub epoch: Option<NaiveDate>,
}

/// Validated, immutable collection of tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    tasks: Vec<TaskRecord>,
    epoch: Option<NaiveDate>,
}

impl Dataset {
    pub fn new(tasks: Vec<TaskRecord>) -> Result<Self, DatasetError> {
        if tasks.is_empty() {
            return Err(DatasetError::Empty);
        }
        let mut seen = HashSet::with_capacity(tasks.len());
        for t in &tasks {
            t.validate()?;
            if !seen.insert(t.task_id.as_str()) {
                return Err(DatasetError::DuplicateId(t.task_id.clone()));
            }
        }
        Ok(Dataset { tasks, epoch: None })
    }

    pub fn with_epoch(mut self, epoch: Option<NaiveDate>) -> Self {
        self.epoch = epoch;
        self
    }

    pub fn tasks(&self) -> &[TaskRecord] {
        &self.tasks
    }

    pub fn epoch(&self) -> Option<NaiveDate> {
        self.epoch
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, task_id: &str) -> Option<&TaskRecord> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    /// Tasks belonging to `project_id`, ordered by planned day then id.
    pub fn project(&self, project_id: &str) -> Vec<TaskRecord> {
        let mut out: Vec<TaskRecord> = self
            .tasks
            .iter()
            .filter(|t| t.project_id.as_deref() == Some(project_id))
            .cloned()
            .collect();
        sort_by_planned_day(&mut out);
        out
    }

    /// Distinct project ids in first-appearance order.
    pub fn project_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.tasks
            .iter()
            .filter_map(|t| t.project_id.as_ref())
            .filter(|p| seen.insert(p.as_str()))
            .cloned()
            .collect()
    }

    pub fn into_tasks(self) -> Vec<TaskRecord> {
        self.tasks
    }
}

pub(crate) fn sort_by_planned_day(tasks: &mut [TaskRecord]) {
    tasks.sort_by(|a, b| {
        a.registration_start
            .cmp(&b.registration_start)
            .then_with(|| a.task_id.cmp(&b.task_id))
    });
}

/// Flat row layout shared by the CSV reader and writer.
#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    task_id: String,
    registration_start: Day,
    registration_end: Day,
    submission_end: Day,
    winner_prize: f64,
    runnerup_prize: Option<f64>,
    task_type: String,
    technologies: String,
    platform_count: u32,
    registrations: u32,
    submissions: u32,
    valid_submissions: u32,
    requirement_text: String,
    #[serde(default, skip_serializing)]
    project_id: Option<String>,
    #[serde(default, skip_serializing)]
    cancelled: Option<bool>,
}

impl From<CsvRow> for TaskRecord {
    fn from(r: CsvRow) -> Self {
        TaskRecord {
            task_id: r.task_id,
            registration_start: r.registration_start,
            registration_end: r.registration_end,
            submission_end: r.submission_end,
            winner_prize: r.winner_prize,
            runnerup_prize: r.runnerup_prize.unwrap_or(0.0),
            task_type: r.task_type,
            technologies: r
                .technologies
                .split('|')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
                .collect(),
            platform_count: r.platform_count,
            registrations: r.registrations,
            submissions: r.submissions,
            valid_submissions: r.valid_submissions,
            requirement_text: r.requirement_text,
            project_id: r.project_id.filter(|p| !p.is_empty()),
            cancelled: r.cancelled.unwrap_or(false),
        }
    }
}

fn csv_error(err: csv::Error) -> DatasetError {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    let field = match err.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err
            .field()
            .and_then(|i| CSV_COLUMNS.get(i as usize))
            .map(|s| s.to_string()),
        _ => None,
    };
    let message = match err.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.kind().to_string(),
        _ => err.to_string(),
    };
    DatasetError::Parse { line, field, message }
}

fn finish(mut tasks: Vec<TaskRecord>, opts: &LoadOptions) -> Result<Dataset, DatasetError> {
    if opts.exclude_cancelled {
        tasks.retain(|t| !t.cancelled);
    }
    Ok(Dataset::new(tasks)?.with_epoch(opts.epoch))
}

pub fn read_csv<R: Read>(reader: R, opts: &LoadOptions) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::Headers)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    for col in CSV_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(DatasetError::Parse {
                line: 1,
                field: Some(col.to_string()),
                message: "missing column in header".into(),
            });
        }
    }
    let mut tasks = Vec::new();
    for row in rdr.deserialize::<CsvRow>() {
        tasks.push(row.map_err(csv_error)?.into());
    }
    finish(tasks, opts)
}

pub fn read_json<R: Read>(reader: R, opts: &LoadOptions) -> Result<Dataset, DatasetError> {
    let tasks: Vec<TaskRecord> = serde_json::from_reader(reader)?;
    finish(tasks, opts)
}

pub fn load_dataset(
    path: impl AsRef<Path>,
    format: DatasetFormat,
    opts: &LoadOptions,
) -> Result<Dataset, DatasetError> {
    let file = BufReader::new(File::open(path.as_ref())?);
    match format {
        DatasetFormat::Csv => read_csv(file, opts),
        DatasetFormat::Json => read_json(file, opts),
    }
}

/// Loads a dataset, picking the format from the file extension.
pub fn load_dataset_auto(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Dataset, DatasetError> {
    let format = DatasetFormat::from_path(path.as_ref())?;
    load_dataset(path, format, opts)
}

/// Writes the canonical CSV. `project_id` and `cancelled` columns are
/// appended only when some record uses them.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<(), DatasetError> {
    let with_project = dataset.tasks.iter().any(|t| t.project_id.is_some());
    let with_cancelled = dataset.tasks.iter().any(|t| t.cancelled);
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::NonNumeric)
        .from_writer(writer);
    let mut header: Vec<&str> = CSV_COLUMNS.to_vec();
    if with_project {
        header.push("project_id");
    }
    if with_cancelled {
        header.push("cancelled");
    }
    w.write_record(&header).map_err(csv_error)?;
    for t in &dataset.tasks {
        let techs = t.technologies.iter().map(String::as_str).collect::<Vec<_>>().join("|");
        let mut rec = vec![
            t.task_id.clone(),
            t.registration_start.to_string(),
            t.registration_end.to_string(),
            t.submission_end.to_string(),
            t.winner_prize.to_string(),
            t.runnerup_prize.to_string(),
            t.task_type.clone(),
            techs,
            t.platform_count.to_string(),
            t.registrations.to_string(),
            t.submissions.to_string(),
            t.valid_submissions.to_string(),
            t.requirement_text.clone(),
        ];
        if with_project {
            rec.push(t.project_id.clone().unwrap_or_default());
        }
        if with_cancelled {
            rec.push(t.cancelled.to_string());
        }
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(dataset: &Dataset, writer: W) -> Result<(), DatasetError> {
    let mut writer = writer;
    serde_json::to_writer_pretty(&mut writer, &dataset.tasks)?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>, format: DatasetFormat) -> Result<(), DatasetError> {
    let file = BufWriter::new(File::create(path.as_ref())?);
    match format {
        DatasetFormat::Csv => write_csv(dataset, file),
        DatasetFormat::Json => write_json(dataset, file),
    }
}
