use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::Serialize;
use stereoscope_core::demo;
use stereoscope_core::scoring::ModelSource;
use stereoscope_core::session::{load_project, project_providers, save_project, Project, Providers};
use tokio::sync::Semaphore;

use crate::config::ServiceConfig;
use crate::error::{ApiError, ApiResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentenceFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobStatus {
    pub model_id: String,
    pub source: ModelSource,
    pub state: JobState,
    pub total: usize,
    pub scored: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<SentenceFailure>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// One project: readers take the current snapshot, writers go through `writer`
/// one at a time and publish a new snapshot when done.
pub struct ProjectSlot {
    pub id: String,
    snapshot: RwLock<Arc<Project>>,
    pub writer: tokio::sync::Mutex<()>,
    pub jobs: Mutex<BTreeMap<String, JobStatus>>,
    pub providers: Mutex<Providers>,
}

impl ProjectSlot {
    fn new(id: String, project: Project, providers: Providers) -> Self {
        ProjectSlot {
            id,
            snapshot: RwLock::new(Arc::new(project)),
            writer: tokio::sync::Mutex::new(()),
            jobs: Mutex::new(BTreeMap::new()),
            providers: Mutex::new(providers),
        }
    }

    pub fn snapshot(&self) -> Arc<Project> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Replaces the snapshot. Callers must hold `writer`.
    pub fn publish(&self, project: Project) -> Arc<Project> {
        let project = Arc::new(project);
        *self.snapshot.write().expect("snapshot lock") = project.clone();
        project
    }

    pub fn providers(&self) -> Providers {
        self.providers.lock().expect("provider lock").clone()
    }
}

pub struct AppState {
    pub config: ServiceConfig,
    projects: RwLock<BTreeMap<String, Arc<ProjectSlot>>>,
    next_id: AtomicU64,
    pub workers: Arc<Semaphore>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        let workers = Arc::new(Semaphore::new(config.workers.max(1)));
        AppState { config, projects: RwLock::new(BTreeMap::new()), next_id: AtomicU64::new(1), workers }
    }

    /// Reloads every project file found in the data directory.
    pub fn load_data_dir(&self) -> io::Result<Vec<String>> {
        let Some(dir) = &self.config.data_dir else { return Ok(Vec::new()) };
        fs::create_dir_all(dir)?;
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut skipped = Vec::new();
        for path in paths {
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            match fs::read(&path).map_err(|e| e.to_string()).and_then(|b| load_project(&b).map_err(|e| e.to_string())) {
                Ok(project) => match self.providers_for(&project) {
                    Ok(providers) => self.insert_with_id(id, project, providers),
                    Err(e) => skipped.push(format!("{}: {}", path.display(), e.message)),
                },
                Err(e) => skipped.push(format!("{}: {e}", path.display())),
            }
        }
        Ok(skipped)
    }

    pub fn providers_for(&self, project: &Project) -> ApiResult<Providers> {
        project_providers(project, &self.config.remote)
            .map_err(|e| ApiError::unprocessable("invalid_model", e.to_string()))
    }

    fn insert_with_id(&self, id: String, project: Project, providers: Providers) {
        if let Some(n) = id.strip_prefix("prj-").and_then(|n| n.parse::<u64>().ok()) {
            self.next_id.fetch_max(n + 1, Ordering::SeqCst);
        }
        let slot = Arc::new(ProjectSlot::new(id.clone(), project, providers));
        self.projects.write().expect("project map lock").insert(id, slot);
    }

    /// Registers a project under the next sequential id.
    pub fn insert(&self, project: Project, providers: Providers) -> ApiResult<Arc<ProjectSlot>> {
        let id = format!("prj-{}", self.next_id.fetch_add(1, Ordering::SeqCst));
        self.persist(&id, &project)?;
        self.insert_with_id(id.clone(), project, providers);
        self.slot(&id)
    }

    pub fn with_demo(self) -> Self {
        let project = demo::project();
        let providers = self.providers_for(&project).expect("demo models are frozen");
        if let Err(e) = self.insert(project, providers) {
            eprintln!("could not store demo project: {}", e.message);
        }
        self
    }

    pub fn slot(&self, id: &str) -> ApiResult<Arc<ProjectSlot>> {
        self.projects.read().expect("project map lock").get(id).cloned().ok_or_else(|| ApiError::not_found("project", id))
    }

    pub fn slots(&self) -> Vec<Arc<ProjectSlot>> {
        self.projects.read().expect("project map lock").values().cloned().collect()
    }

    /// Writes the project file if a data directory is configured.
    pub fn persist(&self, id: &str, project: &Project) -> ApiResult<()> {
        let Some(dir) = &self.config.data_dir else { return Ok(()) };
        write_atomic(&dir.join(format!("{id}.json")), &save_project(project))
            .map_err(|e| ApiError::internal(format!("could not write project {id}: {e}")))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}
