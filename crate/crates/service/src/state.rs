use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use whatif_core::counterfactual::DistanceNorm;
use whatif_core::dataset::Dataset;
use whatif_core::model::{ModelRegistry, ModelSlot, PredictionOutput, RemoteOptions};

use crate::error::ApiError;

pub const DEFAULT_SESSION: &str = "default";
pub const SESSION_HEADER: &str = "x-whatif-session";

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Allow `POST /sessions` and session selection by header.
    pub multi_session: bool,
    /// Permissive CORS for a workbench served from another origin.
    pub cors: bool,
    /// Static workbench assets served under `/ui`.
    pub ui_dir: Option<std::path::PathBuf>,
    pub remote: RemoteOptions,
}

/// Per-session defaults used when a request leaves a parameter out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub cost_ratio: f64,
    pub norm: DistanceNorm,
    pub bin_count: usize,
    pub label: Option<String>,
    pub positive: Option<String>,
    pub classes: Option<Vec<String>>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            cost_ratio: 1.0,
            norm: DistanceNorm::L1,
            bin_count: 10,
            label: None,
            positive: None,
            classes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub snapshot_version: u64,
    pub model: ModelSlot,
    pub output: PredictionOutput,
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub id: String,
    pub name: Option<String>,
    pub data: Arc<Dataset>,
}

#[derive(Debug, Default)]
pub struct SessionState {
    pub dataset: Option<LoadedDataset>,
    pub models: ModelRegistry,
    /// Scores recorded after each edit, per point id.
    pub history: HashMap<u64, Vec<HistoryEntry>>,
    pub settings: Settings,
    uploads: u64,
}

impl SessionState {
    /// Installs a new dataset and returns its id. Caches and history from
    /// the previous dataset are dropped.
    pub fn load(&mut self, dataset: Dataset, name: Option<String>) -> String {
        self.uploads += 1;
        let id = format!("d{}", self.uploads);
        self.dataset = Some(LoadedDataset {
            id: id.clone(),
            name,
            data: Arc::new(dataset),
        });
        self.history.clear();
        self.models.clear_caches();
        id
    }
}

/// A consistent view of a session taken under the read lock.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub dataset: Option<LoadedDataset>,
    pub models: ModelRegistry,
    pub settings: Settings,
}

impl Snapshot {
    pub fn dataset(&self, id: Option<&str>, version: Option<u64>) -> Result<Arc<Dataset>, ApiError> {
        let loaded = self.dataset.as_ref().ok_or_else(ApiError::no_dataset)?;
        if let Some(id) = id {
            if id != loaded.id {
                return Err(ApiError::unknown_dataset(id));
            }
        }
        if let Some(v) = version {
            if v != loaded.data.version() {
                return Err(ApiError::stale(v, loaded.data.version()));
            }
        }
        Ok(loaded.data.clone())
    }
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub state: RwLock<SessionState>,
}

impl Session {
    fn new(id: String) -> Self {
        Session {
            id,
            state: RwLock::new(SessionState::default()),
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        let state = self.state.read().expect("session lock");
        Snapshot {
            dataset: state.dataset.clone(),
            models: state.models.clone(),
            settings: state.settings.clone(),
        }
    }

    pub fn write(&self) -> std::sync::RwLockWriteGuard<'_, SessionState> {
        self.state.write().expect("session lock")
    }
}

#[derive(Debug)]
pub struct AppState {
    pub config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    next_session: AtomicU64,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        let mut sessions = HashMap::new();
        sessions.insert(DEFAULT_SESSION.to_string(), Arc::new(Session::new(DEFAULT_SESSION.to_string())));
        AppState {
            config,
            sessions: RwLock::new(sessions),
            next_session: AtomicU64::new(1),
        }
    }

    pub fn default_session(&self) -> Arc<Session> {
        self.session(DEFAULT_SESSION).expect("default session always exists")
    }

    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.read().expect("sessions lock").get(id).cloned()
    }

    pub fn create_session(&self) -> Arc<Session> {
        let n = self.next_session.fetch_add(1, Ordering::Relaxed);
        let session = Arc::new(Session::new(format!("s{n}")));
        self.sessions
            .write()
            .expect("sessions lock")
            .insert(session.id.clone(), session.clone());
        session
    }

    pub fn remove_session(&self, id: &str) -> bool {
        id != DEFAULT_SESSION && self.sessions.write().expect("sessions lock").remove(id).is_some()
    }
}
