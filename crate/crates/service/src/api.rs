use std::collections::BTreeSet;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::Json;
use crowd_sched::exec::Execution;
use crowd_sched::predictor::{train, training_set, FeatureVector, MlpModel, TrainConfig};
use crowd_sched::scheduler::{recommend, schedule_project, ProjectSchedule, RollingSchedule, ScheduleMode};
use crowd_sched::similarity::PreparedTask;
use crowd_sched::task::{read_csv, Dataset, Day, TaskRecord};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{parse_json, ApiError};
use crate::state::{AppState, LoadedDataset, Session, SessionSnapshot, SessionView};

pub type Shared = Arc<AppState>;
type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn lock(session: &Mutex<Session>) -> Result<MutexGuard<'_, Session>, ApiError> {
    session
        .lock()
        .map_err(|_| ApiError::internal("session state poisoned by an earlier failure"))
}

fn check_offset(offset: i64) -> Result<u8, ApiError> {
    match u8::try_from(offset) {
        Ok(o) if o <= 2 => Ok(o),
        _ => Err(ApiError::unprocessable(format!("offset {offset} is outside 0..=2")).with_field("offset")),
    }
}

pub async fn healthz(State(state): State<Shared>) -> Json<Value> {
    let (datasets, models, sessions) = state.counts();
    Json(json!({
        "status": "ok",
        "datasets": datasets,
        "models": models,
        "sessions": sessions,
    }))
}

#[derive(Debug, Deserialize)]
pub struct IdQuery {
    pub id: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetUpload {
    #[serde(default)]
    id: Option<String>,
    tasks: Vec<TaskRecord>,
}

#[derive(Debug, Serialize)]
pub struct DatasetInfo {
    pub dataset_id: String,
    pub tasks: usize,
    pub projects: Vec<String>,
}

fn is_csv(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("csv"))
}

/// Accepts CSV (`Content-Type: text/csv`), a JSON array of tasks, or
/// `{"id": ..., "tasks": [...]}`.
pub async fn post_dataset(
    State(state): State<Shared>,
    Query(query): Query<IdQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<(StatusCode, Json<DatasetInfo>), ApiError> {
    let csv = is_csv(&headers);
    let info = blocking(move || {
        let ingest = &state.config.ingest;
        let (id, dataset) = if csv {
            let ds =
                read_csv(body.as_ref(), &ingest.load_options()).map_err(|e| ApiError::bad_request(e.to_string()))?;
            (query.id, ds)
        } else {
            let first = body.iter().find(|b| !b.is_ascii_whitespace());
            let (id, mut tasks) = if first == Some(&b'[') {
                (query.id, parse_json::<Vec<TaskRecord>>(&body)?)
            } else {
                let up: DatasetUpload = parse_json(&body)?;
                (up.id.or(query.id), up.tasks)
            };
            if ingest.exclude_cancelled {
                tasks.retain(|t| !t.cancelled);
            }
            let ds = Dataset::new(tasks).map_err(|e| ApiError::unprocessable(e.to_string()))?;
            (id, ds.with_epoch(ingest.epoch))
        };
        let loaded = state.add_dataset(id, dataset)?;
        Ok(DatasetInfo {
            dataset_id: loaded.id.clone(),
            tasks: loaded.dataset.len(),
            projects: loaded.dataset.project_ids(),
        })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(info)))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainJob {
    #[serde(default)]
    dataset_id: Option<String>,
    #[serde(default)]
    config: Option<TrainConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainRequest {
    #[serde(default)]
    id: Option<String>,
    train: TrainJob,
}

/// Uploads a model file as the body, or trains one when the body is
/// `{"train": {"dataset_id": ..., "config": {...}}}`.
pub async fn post_model(
    State(state): State<Shared>,
    Query(query): Query<IdQuery>,
    body: Bytes,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let value: Value = parse_json(&body)?;
    let info = if value.get("train").is_some() {
        let req: TrainRequest = parse_json(&body)?;
        let ds = state.dataset(req.train.dataset_id.as_deref())?;
        let cfg = req.train.config.unwrap_or_else(|| state.config.train.clone());
        cfg.validate()
            .map_err(|e| ApiError::unprocessable(e.to_string()).with_field("train.config"))?;
        let id = req.id.or(query.id);
        blocking(move || {
            let set = training_set(&ds.pool, cfg.target, Execution::default())?;
            let outcome = train(&set, &cfg).map_err(|e| ApiError::unprocessable(e.to_string()))?;
            let loaded = state.add_model(id, outcome.model);
            Ok(json!({
                "model_id": loaded.id,
                "dataset_id": ds.id,
                "trained": true,
                "best_epoch": outcome.best_epoch,
                "restarts": outcome.restarts,
                "curve": outcome.curve,
            }))
        })
        .await?
    } else {
        let text = std::str::from_utf8(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let model = MlpModel::from_json(text).map_err(|e| ApiError::bad_request(format!("invalid model file: {e}")))?;
        let loaded = state.add_model(query.id, model);
        json!({ "model_id": loaded.id, "trained": false })
    };
    Ok((StatusCode::CREATED, Json(info)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    #[serde(default)]
    pub dataset_id: Option<String>,
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default)]
    pub task_id: Option<String>,
    #[serde(default)]
    pub day: Option<Day>,
    #[serde(default)]
    pub features: Option<Vec<FeatureVector>>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PredictResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub day: Option<Day>,
    pub p0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommended_offset: Option<u8>,
}

/// Failure probabilities at offsets 0, 1, 2. Reads no session state.
pub async fn post_predict(State(state): State<Shared>, body: Bytes) -> ApiResult<PredictResponse> {
    let req: PredictRequest = parse_json(&body)?;
    let model = state.model(req.model_id.as_deref())?;
    match (req.task_id, req.features) {
        (Some(_), Some(_)) => Err(ApiError::bad_request("give either `task_id` or `features`, not both")),
        (None, None) => Err(ApiError::bad_request("missing field `task_id` or `features`").with_field("task_id")),
        (None, Some(features)) => {
            if features.is_empty() || features.len() > 3 {
                return Err(ApiError::bad_request("`features` must hold 1 to 3 vectors").with_field("features"));
            }
            let mut p = Vec::with_capacity(3);
            for (i, f) in features.iter().enumerate() {
                f.validate()
                    .map_err(|e| ApiError::unprocessable(e.to_string()).with_field(format!("features[{i}]")))?;
                p.push(model.model.forward(f));
            }
            Ok(Json(PredictResponse {
                task_id: None,
                day: None,
                p0: p[0],
                p1: p.get(1).copied(),
                p2: p.get(2).copied(),
                recommended_offset: None,
            }))
        }
        (Some(task_id), None) => {
            let ds = state.dataset(req.dataset_id.as_deref())?;
            blocking(move || {
                let task = ds
                    .dataset
                    .get(&task_id)
                    .ok_or_else(|| ApiError::not_found(format!("unknown task `{task_id}`")))?;
                let day = req.day.unwrap_or(task.registration_start);
                let d = recommend(&ds.pool, &model.model, task, day)?;
                Ok(Json(PredictResponse {
                    task_id: Some(d.task_id),
                    day: Some(day),
                    p0: d.predictions[0],
                    p1: Some(d.predictions[1]),
                    p2: Some(d.predictions[2]),
                    recommended_offset: Some(d.recommended_offset),
                }))
            })
            .await
        }
    }
}

fn select_tasks(
    ds: &LoadedDataset,
    project_id: Option<&str>,
    task_ids: Option<&[String]>,
) -> Result<Vec<TaskRecord>, ApiError> {
    match (project_id, task_ids) {
        (Some(p), Some(ids)) => {
            let tasks = select_tasks(ds, None, Some(ids))?;
            match tasks.iter().find(|t| t.project_id.as_deref() != Some(p)) {
                Some(t) => Err(
                    ApiError::bad_request(format!("task `{}` is not in project `{p}`", t.task_id))
                        .with_field("task_ids"),
                ),
                None => Ok(tasks),
            }
        }
        (Some(p), None) => {
            let tasks = ds.dataset.project(p);
            if tasks.is_empty() {
                Err(ApiError::not_found(format!("unknown project `{p}`")).with_field("project_id"))
            } else {
                Ok(tasks)
            }
        }
        (None, Some(ids)) => {
            let mut seen = BTreeSet::new();
            ids.iter()
                .map(|id| {
                    if !seen.insert(id.as_str()) {
                        return Err(ApiError::bad_request(format!("task `{id}` listed twice")).with_field("task_ids"));
                    }
                    ds.dataset
                        .get(id)
                        .cloned()
                        .ok_or_else(|| ApiError::not_found(format!("unknown task `{id}`")).with_field("task_ids"))
                })
                .collect()
        }
        (None, None) => Ok(ds.dataset.tasks().to_vec()),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleRequest {
    #[serde(default)]
    pub dataset_id: Option<String>,
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default)]
    pub project_id: Option<String>,
    #[serde(default)]
    pub task_ids: Option<Vec<String>>,
    #[serde(default)]
    pub mode: ScheduleMode,
}

/// Batch schedule of a project, a task list, or the whole dataset.
pub async fn post_schedule(State(state): State<Shared>, body: Bytes) -> ApiResult<ProjectSchedule> {
    let req: ScheduleRequest = parse_json(&body)?;
    let model = state.model(req.model_id.as_deref())?;
    let ds = state.dataset(req.dataset_id.as_deref())?;
    blocking(move || {
        let tasks = select_tasks(&ds, req.project_id.as_deref(), req.task_ids.as_deref())?;
        let schedule = schedule_project(&ds.pool, &model.model, &tasks, req.mode, Execution::default())?;
        Ok(Json(schedule))
    })
    .await
}

/// Unknown fields are ignored so a snapshot file can be posted back
/// as-is to restore its session.
#[derive(Debug, Default, Deserialize)]
pub struct SessionRequest {
    #[serde(default)]
    pub dataset_id: Option<String>,
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default)]
    pub project_id: Option<String>,
    #[serde(default)]
    pub task_ids: Option<Vec<String>>,
    /// Decisions to replay before the session is handed out.
    #[serde(default)]
    pub offsets: Vec<i64>,
}

pub async fn post_session(
    State(state): State<Shared>,
    body: Bytes,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let req: SessionRequest = if body.iter().all(u8::is_ascii_whitespace) {
        SessionRequest::default()
    } else {
        parse_json(&body)?
    };
    let model = state.model(req.model_id.as_deref())?;
    let ds = state.dataset(req.dataset_id.as_deref())?;
    let offsets = req
        .offsets
        .iter()
        .map(|&o| check_offset(o))
        .collect::<Result<Vec<_>, _>>()?;
    let view = blocking(move || {
        let tasks = select_tasks(&ds, req.project_id.as_deref(), req.task_ids.as_deref())?;
        if offsets.len() > tasks.len() {
            return Err(ApiError::conflict(format!(
                "{} offsets given for {} tasks",
                offsets.len(),
                tasks.len()
            )));
        }
        let mut schedule = RollingSchedule::new(ds.pool.clone(), tasks);
        for o in offsets {
            schedule.decide(&model.model, Some(o))?;
        }
        let session = Session {
            id: String::new(),
            dataset: ds,
            model,
            project_id: req.project_id,
            schedule,
        };
        let handle = state.insert_session(session);
        let view = lock(&handle)?.view();
        Ok(view)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)))
}

pub async fn get_session(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<SessionView> {
    let handle = state.session(&id)?;
    blocking(move || Ok(Json(lock(&handle)?.view()))).await
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct NextTask {
    pub task_id: String,
    pub planned_day: Day,
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    pub recommended_offset: u8,
    pub open_tasks: usize,
    pub avg_similarity: f64,
    pub prize: f64,
    pub duration: Day,
    pub technologies: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct NextView {
    pub session_id: String,
    pub cursor: usize,
    pub total: usize,
    pub finished: bool,
    pub next: Option<NextTask>,
}

fn next_view(session: &Session) -> Result<NextView, ApiError> {
    let schedule = &session.schedule;
    let next = match schedule.next(&session.model.model)? {
        None => None,
        Some(d) => {
            let task = &schedule.tasks()[schedule.cursor()];
            let placed = PreparedTask::new(task.clone());
            let ctx = schedule.pool().arrival_context(&placed, d.planned_day);
            Some(NextTask {
                task_id: d.task_id,
                planned_day: d.planned_day,
                p0: d.predictions[0],
                p1: d.predictions[1],
                p2: d.predictions[2],
                recommended_offset: d.recommended_offset,
                open_tasks: ctx.open_count(),
                avg_similarity: ctx.avg_similarity(),
                prize: task.actual_prize(),
                duration: task.duration(),
                technologies: task.technologies.iter().cloned().collect(),
            })
        }
    };
    Ok(NextView {
        session_id: session.id.clone(),
        cursor: schedule.cursor(),
        total: schedule.len(),
        finished: schedule.is_finished(),
        next,
    })
}

/// The upcoming task's predictions under the pool as committed so far.
pub async fn get_next(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<NextView> {
    let handle = state.session(&id)?;
    blocking(move || {
        let session = lock(&handle)?;
        Ok(Json(next_view(&session)?))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecideRequest {
    pub offset: i64,
    #[serde(default)]
    pub task_id: Option<String>,
}

pub async fn post_decide(State(state): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<SessionView> {
    let req: DecideRequest = parse_json(&body)?;
    let offset = check_offset(req.offset)?;
    let handle = state.session(&id)?;
    blocking(move || {
        let mut guard = lock(&handle)?;
        let session = &mut *guard;
        let model = &session.model.model;
        match &req.task_id {
            Some(task_id) => session.schedule.decide_task(model, task_id, Some(offset))?,
            None => session.schedule.decide(model, Some(offset))?,
        };
        Ok(Json(session.view()))
    })
    .await
}

#[derive(Debug, Serialize)]
pub struct SnapshotResponse {
    pub path: Option<String>,
    pub snapshot: SessionSnapshot,
}

/// Returns the replayable session state and, when the service has a
/// snapshot directory, writes it there as `<session_id>.json`.
pub async fn post_snapshot(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<SnapshotResponse> {
    let handle = state.session(&id)?;
    let dir = state.snapshot_dir.clone();
    blocking(move || {
        let snapshot = lock(&handle)?.snapshot();
        let path = match dir {
            Some(dir) => {
                let path = dir.join(format!("{}.json", snapshot.session_id));
                let text = serde_json::to_string_pretty(&snapshot).map_err(|e| ApiError::internal(e.to_string()))?;
                std::fs::write(&path, text + "\n")
                    .map_err(|e| ApiError::internal(format!("cannot write {}: {e}", path.display())))?;
                Some(path.display().to_string())
            }
            None => None,
        };
        Ok(Json(SnapshotResponse { path, snapshot }))
    })
    .await
}
