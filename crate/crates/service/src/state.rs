use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use crowd_sched::config::EngineConfig;
use crowd_sched::platform::Pool;
use crowd_sched::predictor::MlpModel;
use crowd_sched::scheduler::{ProjectSchedule, RollingSchedule, ScheduleDecision, ScheduleMode};
use crowd_sched::task::Dataset;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

/// A dataset with its platform pool, shared read-only by every request.
#[derive(Debug)]
pub struct LoadedDataset {
    pub id: String,
    pub dataset: Dataset,
    pub pool: Pool,
}

#[derive(Debug)]
pub struct LoadedModel {
    pub id: String,
    pub model: MlpModel,
}

#[derive(Debug, Default)]
struct Registry {
    datasets: HashMap<String, Arc<LoadedDataset>>,
    models: HashMap<String, Arc<LoadedModel>>,
    current_dataset: Option<String>,
    current_model: Option<String>,
}

/// Rolling what-if session over one project. The pool inside
/// `schedule` is rebuilt only from the dataset and the committed offsets.
#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub dataset: Arc<LoadedDataset>,
    pub model: Arc<LoadedModel>,
    pub project_id: Option<String>,
    pub schedule: RollingSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub dataset_id: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project_id: Option<String>,
    pub mode: ScheduleMode,
    pub cursor: usize,
    pub total: usize,
    pub finished: bool,
    pub decisions: Vec<ScheduleDecision>,
    pub schedule: ProjectSchedule,
}

/// What a snapshot file holds: enough to replay the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub session_id: String,
    pub dataset_id: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project_id: Option<String>,
    pub task_ids: Vec<String>,
    pub offsets: Vec<u8>,
}

impl Session {
    pub fn view(&self) -> SessionView {
        SessionView {
            session_id: self.id.clone(),
            dataset_id: self.dataset.id.clone(),
            model_id: self.model.id.clone(),
            project_id: self.project_id.clone(),
            mode: ScheduleMode::Rolling,
            cursor: self.schedule.cursor(),
            total: self.schedule.len(),
            finished: self.schedule.is_finished(),
            decisions: self.schedule.decisions().to_vec(),
            schedule: self.schedule.schedule(),
        }
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            session_id: self.id.clone(),
            dataset_id: self.dataset.id.clone(),
            model_id: self.model.id.clone(),
            project_id: self.project_id.clone(),
            task_ids: self.schedule.tasks().iter().map(|t| t.task_id.clone()).collect(),
            offsets: self.schedule.decisions().iter().map(|d| d.chosen_offset).collect(),
        }
    }
}

/// Shared service state. Datasets and models are immutable once
/// registered; each session sits behind its own mutex.
#[derive(Debug)]
pub struct AppState {
    pub config: EngineConfig,
    pub snapshot_dir: Option<PathBuf>,
    registry: RwLock<Registry>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(config: EngineConfig) -> Self {
        AppState {
            config,
            snapshot_dir: None,
            registry: RwLock::default(),
            sessions: RwLock::default(),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn with_snapshot_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.snapshot_dir = Some(dir.into());
        self
    }

    fn fresh_id(&self, prefix: &str) -> String {
        format!("{prefix}-{}", self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    /// Builds the pool and registers the dataset as current.
    pub fn add_dataset(&self, id: Option<String>, dataset: Dataset) -> Result<Arc<LoadedDataset>, ApiError> {
        let pool = Pool::new(&dataset, &self.config.similarity.weights, self.config.platform)
            .map_err(|e| ApiError::unprocessable(e.to_string()))?;
        let id = id.unwrap_or_else(|| self.fresh_id("dataset"));
        let loaded = Arc::new(LoadedDataset {
            id: id.clone(),
            dataset,
            pool,
        });
        let mut reg = self.registry.write().expect("registry lock");
        reg.datasets.insert(id.clone(), loaded.clone());
        reg.current_dataset = Some(id);
        Ok(loaded)
    }

    /// Registers the model as current.
    pub fn add_model(&self, id: Option<String>, model: MlpModel) -> Arc<LoadedModel> {
        let id = id.unwrap_or_else(|| self.fresh_id("model"));
        let loaded = Arc::new(LoadedModel { id: id.clone(), model });
        let mut reg = self.registry.write().expect("registry lock");
        reg.models.insert(id.clone(), loaded.clone());
        reg.current_model = Some(id);
        loaded
    }

    pub fn dataset(&self, id: Option<&str>) -> Result<Arc<LoadedDataset>, ApiError> {
        let reg = self.registry.read().expect("registry lock");
        match id.or(reg.current_dataset.as_deref()) {
            Some(id) => reg
                .datasets
                .get(id)
                .cloned()
                .ok_or_else(|| ApiError::not_found(format!("unknown dataset `{id}`"))),
            None => Err(ApiError::not_found("no dataset loaded")),
        }
    }

    pub fn model(&self, id: Option<&str>) -> Result<Arc<LoadedModel>, ApiError> {
        let reg = self.registry.read().expect("registry lock");
        match id.or(reg.current_model.as_deref()) {
            Some(id) => reg
                .models
                .get(id)
                .cloned()
                .ok_or_else(|| ApiError::not_found(format!("unknown model `{id}`"))),
            None => Err(ApiError::no_model()),
        }
    }

    pub fn insert_session(&self, mut session: Session) -> Arc<Mutex<Session>> {
        session.id = self.fresh_id("session");
        let id = session.id.clone();
        let handle = Arc::new(Mutex::new(session));
        self.sessions
            .write()
            .expect("session table lock")
            .insert(id, handle.clone());
        handle
    }

    pub fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session `{id}`")))
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let reg = self.registry.read().expect("registry lock");
        let sessions = self.sessions.read().expect("session table lock").len();
        (reg.datasets.len(), reg.models.len(), sessions)
    }
}
