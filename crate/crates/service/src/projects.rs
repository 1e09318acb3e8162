use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Deserialize;
use serde_json::{json, Value};
use stereoscope_core::dataset::{parse_dataset, validate, DatasetError, Format};
use stereoscope_core::scoring::{score_corpus, ModelSource, PllOptions};
use stereoscope_core::session::{build_provider, load_project, save_project, save_project_gzip, Project, ProjectError};

use crate::error::{ApiError, ApiResult};
use crate::extract::ApiJson;
use crate::state::{AppState, JobState, JobStatus, ProjectSlot, SentenceFailure};

type Shared = State<Arc<AppState>>;

fn dataset_error(e: DatasetError) -> ApiError {
    let line = match &e {
        DatasetError::Utf8 { line }
        | DatasetError::Malformed { line, .. }
        | DatasetError::MissingField { line, .. }
        | DatasetError::DuplicateId { line, .. }
        | DatasetError::InvalidGroup { line, .. }
        | DatasetError::DanglingParaphrase { line, .. } => Some(*line),
        _ => None,
    };
    let record_id = match &e {
        DatasetError::DuplicateId { id, .. } | DatasetError::DanglingParaphrase { id, .. } => Some(id.clone()),
        _ => None,
    };
    ApiError::unprocessable("invalid_dataset", e.to_string()).with_details(json!({
        "diagnostics": [{"severity": "error", "record_id": record_id, "line": line, "message": e.to_string()}]
    }))
}

fn format_from(name: Option<&str>, hint: Option<&str>) -> ApiResult<Format> {
    if let Some(f) = hint {
        return f.parse().map_err(|e: DatasetError| ApiError::unprocessable("invalid_format", e.to_string()));
    }
    Ok(match name {
        Some(n) if n.to_ascii_lowercase().ends_with(".csv") => Format::Csv,
        _ => Format::Jsonl,
    })
}

/// `POST /api/projects`: multipart with a `file` part (and optional `format`
/// part), or the dataset as the raw body with `?format=`.
pub async fn create(State(state): Shared, Query(query): Query<HashMap<String, String>>, request: Request) -> ApiResult<Response> {
    let is_multipart = request
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let content_type_csv = request
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("text/csv"));

    let (bytes, format) = if is_multipart {
        let mut multipart = Multipart::from_request(request, &())
            .await
            .map_err(|e| ApiError::new(e.status(), "invalid_body", e.body_text()))?;
        let mut file: Option<(Option<String>, Bytes)> = None;
        let mut format_field: Option<String> = None;
        while let Some(field) =
            multipart.next_field().await.map_err(|e| ApiError::new(e.status(), "invalid_body", e.body_text()))?
        {
            let name = field.name().unwrap_or_default().to_string();
            let file_name = field.file_name().map(str::to_string);
            let data = field.bytes().await.map_err(|e| ApiError::new(e.status(), "invalid_body", e.body_text()))?;
            match name.as_str() {
                "format" => format_field = Some(String::from_utf8_lossy(&data).trim().to_string()),
                _ if file.is_none() => file = Some((file_name, data)),
                _ => {}
            }
        }
        let (file_name, data) = file.ok_or_else(|| ApiError::unprocessable("invalid_body", "multipart body has no file part"))?;
        let hint = format_field.as_deref().or(query.get("format").map(String::as_str));
        (data, format_from(file_name.as_deref(), hint)?)
    } else {
        let data = Bytes::from_request(request, &()).await.map_err(|e| ApiError::new(e.status(), "invalid_body", e.body_text()))?;
        let hint = query.get("format").map(String::as_str).or(content_type_csv.then_some("csv"));
        (data, format_from(None, hint)?)
    };

    let corpus = parse_dataset(&bytes[..], format).map_err(dataset_error)?;
    let diagnostics = validate(&corpus);
    if !diagnostics.is_empty() {
        let message = diagnostics.iter().map(|d| d.message.as_str()).collect::<Vec<_>>().join("; ");
        return Err(ApiError::unprocessable("invalid_dataset", message).with_details(json!({ "diagnostics": diagnostics })));
    }
    let slot = state.insert(Project::new(corpus), Default::default())?;
    Ok((StatusCode::CREATED, Json(json!({ "project_id": slot.id }))).into_response())
}

fn summary(slot: &ProjectSlot, project: &Project) -> Value {
    json!({
        "project_id": slot.id,
        "n_sentences": project.corpus.len(),
        "n_pairs": project.corpus.pairs().len(),
        "categories": project.corpus.categories(),
        "columns": project.corpus.columns(),
        "models": model_statuses(slot, project),
        "probes": project.probes.len(),
        "embeddings": project.embeddings.keys().collect::<Vec<_>>(),
        "active_embedding": project.view_settings.active_embedding,
    })
}

pub async fn list(State(state): Shared) -> Json<Value> {
    let items: Vec<Value> = state.slots().iter().map(|slot| summary(slot, &slot.snapshot())).collect();
    Json(json!({ "projects": items }))
}

pub async fn show(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let slot = state.slot(&id)?;
    let project = slot.snapshot();
    let mut body = summary(&slot, &project);
    body["filters"] = json!(project.filters);
    body["view_settings"] = json!(project.view_settings);
    Ok(Json(body))
}

pub async fn export(State(state): Shared, Path(id): Path<String>, Query(query): Query<HashMap<String, String>>) -> ApiResult<Response> {
    let slot = state.slot(&id)?;
    let project = slot.snapshot();
    let gzip = query.get("gzip").is_some_and(|v| v == "true" || v == "1");
    let (bytes, content_type, ext) = if gzip {
        (save_project_gzip(&project), "application/gzip", "json.gz")
    } else {
        (save_project(&project), "application/json", "json")
    };
    let disposition = format!("attachment; filename=\"{id}.{ext}\"");
    Ok(([(header::CONTENT_TYPE, content_type.to_string()), (header::CONTENT_DISPOSITION, disposition)], bytes).into_response())
}

pub async fn import(State(state): Shared, body: Bytes) -> ApiResult<Response> {
    let project = load_project(&body).map_err(|e| {
        let kind = match e {
            ProjectError::Integrity(_) => "integrity",
            ProjectError::Version { .. } => "version",
            ProjectError::Schema { .. } => "schema",
            ProjectError::Referential(_) => "referential",
        };
        ApiError::unprocessable("invalid_project", e.to_string()).with_details(json!({ "kind": kind }))
    })?;
    let providers = state.providers_for(&project)?;
    let slot = state.insert(project, providers)?;
    Ok((StatusCode::CREATED, Json(json!({ "project_id": slot.id }))).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Builtin,
    Remote,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddModel {
    pub model_id: String,
    pub provider: ProviderKind,
    pub endpoint: Option<String>,
    pub alpha: Option<f64>,
    #[serde(default)]
    pub exclude_punctuation: bool,
}

/// Status of every model: scored ones from the matrix, the rest from jobs.
fn model_statuses(slot: &ProjectSlot, project: &Project) -> Vec<JobStatus> {
    let jobs = slot.jobs.lock().expect("job lock");
    let mut out: Vec<JobStatus> = project
        .scores
        .models()
        .iter()
        .map(|m| {
            jobs.get(&m.model_id).cloned().unwrap_or_else(|| JobStatus {
                model_id: m.model_id.clone(),
                source: m.source.clone(),
                state: JobState::Completed,
                total: project.corpus.len(),
                scored: m.scores.len(),
                failures: Vec::new(),
                message: None,
            })
        })
        .collect();
    out.extend(jobs.values().filter(|j| !project.scores.contains_model(&j.model_id)).cloned());
    out
}

fn status_response(status: JobStatus, code: StatusCode) -> ApiResult<Response> {
    if status.state == JobState::Failed {
        let message = status.message.clone().unwrap_or_else(|| format!("scoring model {} failed", status.model_id));
        return Err(ApiError::bad_gateway(message).with_details(json!(status)));
    }
    Ok((code, Json(status)).into_response())
}

pub async fn add_model(
    State(state): Shared,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
    ApiJson(request): ApiJson<AddModel>,
) -> ApiResult<Response> {
    let slot = state.slot(&id)?;
    let model_id = request.model_id.trim().to_string();
    if model_id.is_empty() {
        return Err(ApiError::unprocessable("invalid_model", "model_id must not be empty"));
    }
    let options = PllOptions { exclude_punctuation: request.exclude_punctuation };
    let source = match request.provider {
        ProviderKind::Builtin => ModelSource::Builtin { alpha: request.alpha.unwrap_or(1.0), options },
        ProviderKind::Remote => {
            let endpoint = request
                .endpoint
                .filter(|e| !e.trim().is_empty())
                .ok_or_else(|| ApiError::unprocessable("invalid_model", "remote provider needs an endpoint"))?;
            ModelSource::Remote { endpoint, options }
        }
    };

    let project = slot.snapshot();
    let provider = build_provider(&model_id, &source, &project.corpus, &state.config.remote)
        .map_err(|e| ApiError::unprocessable("invalid_model", e.to_string()))?;
    let status = JobStatus {
        model_id: model_id.clone(),
        source: source.clone(),
        state: JobState::Queued,
        total: project.corpus.len(),
        scored: 0,
        failures: Vec::new(),
        message: None,
    };
    {
        let mut jobs = slot.jobs.lock().expect("job lock");
        let taken = project.scores.contains_model(&model_id)
            || jobs.get(&model_id).is_some_and(|j| j.state != JobState::Failed);
        if taken {
            return Err(ApiError::conflict("duplicate_model", format!("model {model_id} already exists")));
        }
        jobs.insert(model_id.clone(), status.clone());
    }

    let handle = tokio::spawn(run_job(state.clone(), slot.clone(), model_id, source, provider));
    if query.get("wait").is_some_and(|v| v == "true" || v == "1") {
        let status = handle.await.map_err(|e| ApiError::internal(e.to_string()))?;
        return status_response(status, StatusCode::CREATED);
    }
    Ok((StatusCode::ACCEPTED, Json(status)).into_response())
}

fn set_job(slot: &ProjectSlot, model_id: &str, f: impl FnOnce(&mut JobStatus)) -> JobStatus {
    let mut jobs = slot.jobs.lock().expect("job lock");
    let job = jobs.get_mut(model_id).expect("job registered before start");
    f(job);
    job.clone()
}

async fn run_job(
    state: Arc<AppState>,
    slot: Arc<ProjectSlot>,
    model_id: String,
    source: ModelSource,
    provider: Arc<dyn stereoscope_core::scoring::TokenLogProbProvider>,
) -> JobStatus {
    let _permit = state.workers.clone().acquire_owned().await.expect("worker pool open");
    set_job(&slot, &model_id, |j| j.state = JobState::Running);

    // The corpus never changes, so any snapshot will do for scoring.
    let corpus_project = slot.snapshot();
    let scorer = provider.clone();
    let (id, src) = (model_id.clone(), source.clone());
    let scored = tokio::task::spawn_blocking(move || score_corpus(scorer.as_ref(), &corpus_project.corpus, &id, src)).await;
    let scores = match scored {
        Ok(Ok(scores)) => scores,
        Ok(Err(e)) => {
            return set_job(&slot, &model_id, |j| {
                j.state = JobState::Failed;
                j.scored = e.completed.len();
                j.failures = e.failed.iter().map(|(id, error)| SentenceFailure { id: id.clone(), error: error.clone() }).collect();
                j.message = Some(e.to_string());
            });
        }
        Err(e) => return set_job(&slot, &model_id, |j| { j.state = JobState::Failed; j.message = Some(e.to_string()) }),
    };

    let _writer = slot.writer.lock().await;
    let current = slot.snapshot();
    let (scores_for_probes, base, scorer) = (scores.clone(), current.clone(), provider.clone());
    let probe_scores =
        tokio::task::spawn_blocking(move || base.score_probes_for(&scores_for_probes, scorer.as_ref())).await;
    let probe_scores = match probe_scores {
        Ok(Ok(p)) => p,
        Ok(Err(e)) => return set_job(&slot, &model_id, |j| { j.state = JobState::Failed; j.message = Some(e.to_string()) }),
        Err(e) => return set_job(&slot, &model_id, |j| { j.state = JobState::Failed; j.message = Some(e.to_string()) }),
    };
    let mut project = (*current).clone();
    let n = scores.scores.len();
    if let Err(e) = project.scores.insert(scores) {
        return set_job(&slot, &model_id, |j| { j.state = JobState::Failed; j.message = Some(e.to_string()) });
    }
    for (probe, score) in project.probes.iter_mut().zip(probe_scores) {
        probe.scores.push(score);
    }
    if let Err(e) = state.persist(&slot.id, &project) {
        return set_job(&slot, &model_id, |j| { j.state = JobState::Failed; j.message = Some(e.message) });
    }
    slot.providers.lock().expect("provider lock").insert(model_id.clone(), provider);
    slot.publish(project);
    set_job(&slot, &model_id, |j| {
        j.state = JobState::Completed;
        j.scored = n;
    })
}

pub async fn list_models(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let slot = state.slot(&id)?;
    let project = slot.snapshot();
    Ok(Json(json!({ "models": model_statuses(&slot, &project) })))
}

pub async fn model_status(State(state): Shared, Path((id, model_id)): Path<(String, String)>) -> ApiResult<Response> {
    let slot = state.slot(&id)?;
    let project = slot.snapshot();
    let status = model_statuses(&slot, &project)
        .into_iter()
        .find(|s| s.model_id == model_id)
        .ok_or_else(|| ApiError::not_found("model", &model_id))?;
    status_response(status, StatusCode::OK)
}
