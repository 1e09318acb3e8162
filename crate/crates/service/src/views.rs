use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use stereoscope_core::analytics::{
    bias_reports_to_csv, category_bands, distribution_summary, stereotype_preference_rate, summary_stats,
    AnalyticsError, DistributionSummary, DEFAULT_GRID_SIZE,
};
use stereoscope_core::embedding::{pca_2d, tsne_2d, Embedding, EmbeddingError, FeatureMatrix, Method, TsneParams};
use stereoscope_core::scoring::ScoringError;
use stereoscope_core::session::{apply_filters, FilterSet, Project, SessionError, ViewSettings};

use crate::error::{ApiError, ApiResult};
use crate::extract::{comma_list, ApiJson};
use crate::state::{AppState, ProjectSlot};

type Shared = State<Arc<AppState>>;
type Params = Query<HashMap<String, String>>;

/// Runs `f` on a copy of the current snapshot under the project's write lock,
/// then persists and publishes the result.
async fn mutate<T>(state: &AppState, slot: &ProjectSlot, f: impl FnOnce(&mut Project) -> ApiResult<T>) -> ApiResult<T> {
    let _writer = slot.writer.lock().await;
    let mut project = (*slot.snapshot()).clone();
    let out = f(&mut project)?;
    state.persist(&slot.id, &project)?;
    slot.publish(project);
    Ok(out)
}

fn scored_models(project: &Project) -> ApiResult<Vec<&str>> {
    let models = project.scores.complete_model_ids();
    if models.is_empty() {
        return Err(ApiError::conflict("no_scored_models", "the project has no scored model yet"));
    }
    Ok(models)
}

fn analytics_error(e: AnalyticsError) -> ApiError {
    match e {
        AnalyticsError::UnknownCategory(c) => ApiError::new(StatusCode::NOT_FOUND, "unknown_category", format!("unknown category {c}")),
        AnalyticsError::UnknownModel(m) => ApiError::not_found("model", &m),
        other => ApiError::unprocessable("analytics", other.to_string()),
    }
}

#[derive(Debug, Serialize)]
struct Distributions {
    models: Vec<String>,
    summaries: Vec<DistributionSummary>,
    bands: Vec<stereoscope_core::analytics::CategoryBand>,
    diagnostics: Vec<String>,
}

/// `?highlight=cat1,cat2&split=group`
pub async fn distributions(State(state): Shared, Path(id): Path<String>, Query(query): Params) -> ApiResult<Json<Value>> {
    let project = state.slot(&id)?.snapshot();
    let models = scored_models(&project)?;
    let highlight = comma_list(query.get("highlight").map(String::as_str));
    let split = match query.get("split").map(String::as_str) {
        None | Some("") | Some("none") => false,
        Some("group") => true,
        Some(other) => return Err(ApiError::unprocessable("invalid_query", format!("split must be \"group\", got {other}"))),
    };
    if let Some(unknown) = highlight.iter().find(|c| !project.corpus.categories().contains(c)) {
        return Err(analytics_error(AnalyticsError::UnknownCategory(unknown.clone())));
    }

    let mut out = Distributions { models: models.iter().map(|m| m.to_string()).collect(), summaries: Vec::new(), bands: Vec::new(), diagnostics: Vec::new() };
    for model in &models {
        match distribution_summary(&project.scores, &project.corpus, model, DEFAULT_GRID_SIZE) {
            Ok(s) => out.summaries.push(s),
            // Identical or single scores: quartiles without a curve.
            Err(e @ (AnalyticsError::PointMass(_) | AnalyticsError::TooFew)) => {
                let values: Vec<f64> = project.corpus.ids().filter_map(|id| project.scores.pll(id, model)).collect();
                let q = summary_stats(&values).map_err(analytics_error)?;
                out.diagnostics.push(format!("model {model}: {e}"));
                out.summaries.push(DistributionSummary {
                    model_id: model.to_string(),
                    density: Vec::new(),
                    median: q.median,
                    q1: q.q1,
                    q3: q.q3,
                    n: values.len(),
                });
            }
            Err(e) => return Err(analytics_error(e)),
        }
    }
    if !highlight.is_empty() {
        let mut matrix = project.scores.clone();
        let partial: Vec<String> =
            matrix.model_ids().into_iter().filter(|m| !models.contains(m)).map(str::to_string).collect();
        for m in partial {
            matrix.remove(&m);
        }
        let bands = category_bands(&matrix, &project.corpus, &highlight, split).map_err(analytics_error)?;
        out.bands = bands.bands;
        out.diagnostics.extend(bands.diagnostics);
    }
    Ok(Json(json!(out)))
}

fn session_error(e: SessionError) -> ApiError {
    match e {
        SessionError::ProbeRejected { model, cause: ScoringError::EmptyText } => {
            ApiError::unprocessable("invalid_probe", format!("probe text is empty (model {model})"))
        }
        SessionError::ProbeRejected { model, cause } => ApiError::bad_gateway(format!("model {model} could not score the probe: {cause}"))
            .with_details(json!({ "model_id": model, "cause": cause.to_string() })),
        SessionError::UnknownProbe(id) => ApiError::not_found("probe", &id),
        other => ApiError::unprocessable("invalid_filter", other.to_string()),
    }
}

pub async fn set_filters(State(state): Shared, Path(id): Path<String>, ApiJson(filters): ApiJson<FilterSet>) -> ApiResult<Json<Value>> {
    let slot = state.slot(&id)?;
    let selection = mutate(&state, &slot, |project| {
        let selection = apply_filters(project, &filters).map_err(session_error)?;
        project.filters = filters;
        Ok(selection)
    })
    .await?;
    Ok(Json(json!(selection)))
}

pub async fn get_filters(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let project = state.slot(&id)?.snapshot();
    let selection = apply_filters(&project, &project.filters).map_err(session_error)?;
    Ok(Json(json!({ "filters": project.filters, "selection": selection })))
}

/// `?selection=current|all&columns=a,b`
pub async fn sentences(State(state): Shared, Path(id): Path<String>, Query(query): Params) -> ApiResult<Json<Value>> {
    let project = state.slot(&id)?.snapshot();
    let columns = comma_list(query.get("columns").map(String::as_str));
    if let Some(unknown) = columns.iter().find(|c| !project.corpus.columns().contains(c)) {
        return Err(ApiError::unprocessable("unknown_column", format!("unknown column {unknown}")));
    }
    let selection = match query.get("selection").map(String::as_str) {
        None | Some("current") => apply_filters(&project, &project.filters).map_err(session_error)?,
        Some("all") => apply_filters(&project, &FilterSet::default()).map_err(session_error)?,
        Some(other) => return Err(ApiError::unprocessable("invalid_query", format!("selection must be current or all, got {other}"))),
    };
    let models = project.scores.model_ids();
    let rows: Vec<Value> = selection
        .ids
        .iter()
        .map(|sid| {
            if let Some(r) = project.corpus.get(sid) {
                let values: BTreeMap<&str, &str> =
                    columns.iter().map(|c| (c.as_str(), r.extra.get(c).map(String::as_str).unwrap_or(""))).collect();
                let plls: BTreeMap<&str, Option<f64>> = models.iter().map(|m| (*m, project.scores.pll(sid, m))).collect();
                json!({
                    "id": r.id, "pair_id": r.pair_id, "group": r.group, "category": r.category, "text": r.text,
                    "paraphrase_of": r.paraphrase_of, "probe": false, "values": values, "plls": plls,
                })
            } else {
                let p = project.probe(sid).expect("selection ids exist");
                let plls: BTreeMap<&str, Option<f64>> = models.iter().map(|m| (*m, p.pll(m))).collect();
                json!({ "id": p.id, "text": p.text, "probe": true, "plls": plls })
            }
        })
        .collect();
    Ok(Json(json!({ "selection": selection, "models": models, "columns": columns, "rows": rows })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRequest {
    pub method: Method,
    #[serde(default)]
    pub params: TsneParams,
    /// Score axes to embed; all scored models when absent.
    pub models: Option<Vec<String>>,
    #[serde(default)]
    pub standardize: bool,
    /// For `user`: sentence ids and their coordinates, index-aligned.
    pub ids: Option<Vec<String>>,
    pub points: Option<Vec<[f64; 2]>>,
}

fn embedding_error(e: EmbeddingError) -> ApiError {
    ApiError::unprocessable("invalid_embedding", e.to_string())
}

pub async fn set_embedding(State(state): Shared, Path(id): Path<String>, ApiJson(request): ApiJson<EmbeddingRequest>) -> ApiResult<Json<Embedding>> {
    let slot = state.slot(&id)?;
    let project = slot.snapshot();
    let embedding = match request.method {
        Method::User => {
            let (ids, points) = request
                .ids
                .zip(request.points)
                .ok_or_else(|| ApiError::unprocessable("invalid_embedding", "user embeddings need ids and points"))?;
            let e = Embedding::user(ids, points).map_err(embedding_error)?;
            e.check_against(&project.corpus).map_err(|err| {
                ApiError::unprocessable("embedding_mismatch", err.to_string()).with_details(json!({ "cause": err.to_string() }))
            })?;
            e
        }
        method => {
            let available = scored_models(&project)?;
            let models: Vec<String> = match request.models {
                Some(m) => m,
                None => available.iter().map(|m| m.to_string()).collect(),
            };
            if let Some(m) = models.iter().find(|m| !available.contains(&m.as_str())) {
                return Err(ApiError::unprocessable("invalid_embedding", format!("model {m} is not scored")));
            }
            let refs: Vec<&str> = models.iter().map(String::as_str).collect();
            let mut features = FeatureMatrix::from_scores(&project.scores, &project.corpus, &refs).map_err(embedding_error)?;
            if request.standardize {
                features = features.standardized();
            }
            let params = request.params;
            tokio::task::spawn_blocking(move || match method {
                Method::Pca => pca_2d(&features),
                _ => tsne_2d(&features, &params),
            })
            .await
            .map_err(|e| ApiError::internal(e.to_string()))?
            .map_err(embedding_error)?
        }
    };
    let stored = embedding.clone();
    mutate(&state, &slot, move |p| {
        p.set_embedding(stored);
        Ok(())
    })
    .await?;
    Ok(Json(embedding))
}

pub async fn get_embedding(State(state): Shared, Path(id): Path<String>, Query(query): Params) -> ApiResult<Json<Embedding>> {
    let project = state.slot(&id)?.snapshot();
    let found = match query.get("method") {
        Some(m) => project.embeddings.get(m),
        None => project.active_embedding(),
    };
    found.cloned().map(Json).ok_or_else(|| ApiError::not_found("embedding", query.get("method").map(String::as_str).unwrap_or("active")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeRequest {
    pub text: String,
}

pub async fn add_probe(State(state): Shared, Path(id): Path<String>, ApiJson(request): ApiJson<ProbeRequest>) -> ApiResult<Response> {
    let slot = state.slot(&id)?;
    if request.text.trim().is_empty() {
        return Err(ApiError::unprocessable("invalid_probe", "probe text is empty"));
    }
    let _writer = slot.writer.lock().await;
    let current = slot.snapshot();
    scored_models(&current)?;
    let providers = slot.providers();
    let base = current.clone();
    let probe = tokio::task::spawn_blocking(move || base.score_probe(&request.text, &providers))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(session_error)?;
    let mut project = (*current).clone();
    project.probes.push(probe.clone());
    state.persist(&slot.id, &project)?;
    slot.publish(project);
    Ok((StatusCode::CREATED, Json(probe)).into_response())
}

pub async fn list_probes(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let project = state.slot(&id)?.snapshot();
    Ok(Json(json!({ "probes": project.probes })))
}

pub async fn remove_probe(State(state): Shared, Path((id, probe_id)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let slot = state.slot(&id)?;
    let removed = mutate(&state, &slot, |p| p.remove_probe(&probe_id).map_err(session_error)).await?;
    Ok(Json(json!(removed)))
}

pub async fn get_view(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<ViewSettings>> {
    Ok(Json(state.slot(&id)?.snapshot().view_settings.clone()))
}

pub async fn set_view(State(state): Shared, Path(id): Path<String>, ApiJson(view): ApiJson<ViewSettings>) -> ApiResult<Json<ViewSettings>> {
    let slot = state.slot(&id)?;
    mutate(&state, &slot, |p| {
        if let Some(c) = view.highlight.iter().find(|c| !p.corpus.categories().contains(c)) {
            return Err(analytics_error(AnalyticsError::UnknownCategory(c.clone())));
        }
        if let Some(c) = view.visible_columns.iter().find(|c| !p.corpus.columns().contains(c)) {
            return Err(ApiError::unprocessable("unknown_column", format!("unknown column {c}")));
        }
        if let Some(e) = view.active_embedding.as_ref().filter(|e| !p.embeddings.contains_key(*e)) {
            return Err(ApiError::unprocessable("invalid_view", format!("no embedding {e}")));
        }
        p.view_settings = view.clone();
        Ok(view)
    })
    .await
    .map(Json)
}

/// `?format=csv` for the table form.
pub async fn bias(State(state): Shared, Path(id): Path<String>, Query(query): Params) -> ApiResult<Response> {
    let project = state.slot(&id)?.snapshot();
    let reports = scored_models(&project)?
        .into_iter()
        .map(|m| stereotype_preference_rate(&project.scores, &project.corpus, m))
        .collect::<Result<Vec<_>, _>>()
        .map_err(analytics_error)?;
    if query.get("format").is_some_and(|f| f == "csv") {
        return Ok(([(header::CONTENT_TYPE, "text/csv")], bias_reports_to_csv(&reports)).into_response());
    }
    Ok(Json(json!({ "reports": reports })).into_response())
}
