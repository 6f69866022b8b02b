use std::collections::HashMap;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use multidimer_core::analyzer::cross_tab;
use multidimer_core::config::COMPONENT_MAP_FILE;
use multidimer_core::jobs::JobState;
use multidimer_core::store::write_atomic;
use multidimer_core::{
    AnalysisError, AnalysisSnapshot, ComponentMap, ComponentMapConfig, CorpusQuery, Dimension,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::ApiError;
use crate::{AppState, SNAPSHOT_HEADER};

pub fn routes() -> Router<AppState> {
    Router::new()
        .route("/jobs", post(submit_job))
        .route("/jobs/{id}", get(get_job))
        .route("/snapshots", get(list_snapshots))
        .route("/snapshots/latest", get(latest_snapshot))
        .route("/snapshots/{id}", get(snapshot_summary))
        .route("/snapshots/{id}/dimensions/{kind}", get(dimension))
        .route("/snapshots/{id}/heatmap", get(heatmap))
        .route("/snapshots/{id}/tree", get(tree))
        .route("/snapshots/{id}/crosstab", get(crosstab))
        .route("/snapshots/{id}/bugs", get(bugs))
        .route("/snapshots/{id}/fst", get(fst))
        .route("/snapshots/{id}/export.csv", get(export_csv))
        .route("/config/component-map", put(put_component_map))
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    snapshot_id: &'a str,
    data: T,
}

fn with_snapshot<T: Serialize>(snapshot_id: &str, data: T) -> Result<Response, ApiError> {
    let body = serde_json::to_vec(&Envelope { snapshot_id, data })
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let id = HeaderValue::from_str(snapshot_id).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok((
        [
            (
                header::CONTENT_TYPE,
                HeaderValue::from_static("application/json"),
            ),
            (header::HeaderName::from_static(SNAPSHOT_HEADER), id),
        ],
        body,
    )
        .into_response())
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn load(state: &AppState, id: String) -> Result<Arc<AnalysisSnapshot>, ApiError> {
    let store = state.store.clone();
    blocking(move || Ok(store.get(&id)?)).await
}

fn parse_dimension(raw: &str, status: StatusCode) -> Result<Dimension, ApiError> {
    raw.parse()
        .map_err(|e: multidimer_core::domain::UnknownDimension| {
            ApiError::new(status, "unknown_dimension", e.to_string())
        })
}

// ---------------------------------------------------------------------------
// Jobs

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRequest {
    pub product_ids: Vec<String>,
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
}

async fn submit_job(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let request: JobRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::unprocessable("invalid_body", e.to_string()))?;
    let query = CorpusQuery::new(request.product_ids, request.from, request.to)
        .map_err(|e| ApiError::unprocessable("invalid_query", e.to_string()))?;
    let job_id = state.jobs.submit_job(query);
    log::info!("accepted {job_id}");
    let location = HeaderValue::from_str(&format!("/api/v1/jobs/{job_id}"))
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok((
        StatusCode::ACCEPTED,
        [(header::LOCATION, location)],
        Json(json!({"job_id": job_id, "state": JobState::Queued})),
    )
        .into_response())
}

async fn get_job(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    Ok(Json(state.jobs.get(&id)?).into_response())
}

// ---------------------------------------------------------------------------
// Snapshots

async fn list_snapshots(State(state): State<AppState>) -> Result<Response, ApiError> {
    let store = state.store.clone();
    let list = blocking(move || Ok(store.list()?)).await?;
    Ok(Json(json!({ "data": list })).into_response())
}

async fn latest_snapshot(State(state): State<AppState>) -> Result<Response, ApiError> {
    let store = state.store.clone();
    match blocking(move || Ok(store.latest()?)).await? {
        Some(summary) => with_snapshot(&summary.snapshot_id.clone(), summary),
        None => Err(ApiError::not_found(
            "snapshot_not_found",
            "no snapshot has been published yet",
        )),
    }
}

async fn snapshot_summary(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let snapshot = load(&state, id).await?;
    let summary = multidimer_core::store::SnapshotSummary::from(snapshot.as_ref());
    with_snapshot(&snapshot.snapshot_id, summary)
}

async fn dimension(
    State(state): State<AppState>,
    Path((id, kind)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let dim = parse_dimension(&kind, StatusCode::NOT_FOUND)?;
    let snapshot = load(&state, id).await?;
    with_snapshot(&snapshot.snapshot_id, snapshot.table(dim))
}

async fn heatmap(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let snapshot = load(&state, id).await?;
    with_snapshot(&snapshot.snapshot_id, &snapshot.heatmap)
}

#[derive(Deserialize)]
struct TreeParams {
    depth: Option<usize>,
}

async fn tree(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(params): Query<TreeParams>,
) -> Result<Response, ApiError> {
    let snapshot = load(&state, id).await?;
    match params.depth {
        Some(depth) => with_snapshot(&snapshot.snapshot_id, snapshot.source_tree.truncated(depth)),
        None => with_snapshot(&snapshot.snapshot_id, &snapshot.source_tree),
    }
}

#[derive(Deserialize)]
struct CrossTabParams {
    a: String,
    b: String,
}

async fn crosstab(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(params): Query<CrossTabParams>,
) -> Result<Response, ApiError> {
    let a = parse_dimension(&params.a, StatusCode::BAD_REQUEST)?;
    let b = parse_dimension(&params.b, StatusCode::BAD_REQUEST)?;
    let snapshot = load(&state, id).await?;
    if let Some(t) = snapshot
        .cross_tabs
        .iter()
        .find(|t| t.dim_a == a && t.dim_b == b)
    {
        return with_snapshot(&snapshot.snapshot_id, t);
    }
    let computed = blocking({
        let snapshot = snapshot.clone();
        move || {
            cross_tab(
                &snapshot.reports,
                &snapshot.attributions,
                a,
                b,
                &snapshot.axis_order(),
            )
            .map_err(same_dim)
        }
    })
    .await?;
    with_snapshot(&snapshot.snapshot_id, computed)
}

fn same_dim(e: AnalysisError) -> ApiError {
    ApiError::bad_request("same_dimension", e.to_string())
}

async fn fst(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let snapshot = load(&state, id).await?;
    with_snapshot(&snapshot.snapshot_id, &snapshot.fst)
}

async fn export_csv(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let snapshot = load(&state, id).await?;
    let bytes = blocking({
        let snapshot = snapshot.clone();
        move || {
            multidimer_core::export::export_csv(&snapshot)
                .map_err(|e| ApiError::internal(e.to_string()))
        }
    })
    .await?;
    let id = HeaderValue::from_str(&snapshot.snapshot_id)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let disposition = HeaderValue::from_str(&format!(
        "attachment; filename=\"{}.csv\"",
        snapshot.snapshot_id
    ))
    .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok((
        [
            (
                header::CONTENT_TYPE,
                HeaderValue::from_static("text/csv; charset=utf-8"),
            ),
            (header::CONTENT_DISPOSITION, disposition),
            (header::HeaderName::from_static(SNAPSHOT_HEADER), id),
        ],
        Body::from(bytes),
    )
        .into_response())
}

// ---------------------------------------------------------------------------
// Drill-down

#[derive(Debug, Clone, Default, Deserialize)]
pub struct DrillDown {
    pub dim: String,
    pub value: String,
    pub dim2: Option<String>,
    pub value2: Option<String>,
    pub limit: Option<usize>,
    pub offset: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugSummary {
    pub bug_id: String,
    pub title: String,
    pub severity: Option<String>,
    pub status: String,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracker_url: Option<String>,
}

fn value_not_found(dim: Dimension, value: &str) -> ApiError {
    ApiError::not_found(
        "value_not_found",
        format!("{dim} has no value `{value}` in this snapshot"),
    )
}

/// Bug ids behind a table row or a matrix cell, exactly as stored.
fn drill_ids(snapshot: &AnalysisSnapshot, q: &DrillDown) -> Result<Vec<String>, ApiError> {
    let a = parse_dimension(&q.dim, StatusCode::BAD_REQUEST)?;
    let (b, value2) = match (&q.dim2, &q.value2) {
        (None, None) => {
            let row = snapshot
                .table(a)
                .row(&q.value)
                .ok_or_else(|| value_not_found(a, &q.value))?;
            return Ok(row.bug_ids.clone());
        }
        (Some(d), Some(v)) => (parse_dimension(d, StatusCode::BAD_REQUEST)?, v.as_str()),
        _ => {
            return Err(ApiError::bad_request(
                "invalid_query",
                "dim2 and value2 go together",
            ))
        }
    };
    if a == b {
        return Err(ApiError::bad_request(
            "same_dimension",
            format!("{a} given twice"),
        ));
    }
    let missing = |t: &multidimer_core::CrossTab| {
        if t.rows.iter().all(|r| r != &q.value) {
            value_not_found(t.dim_a, &q.value)
        } else {
            value_not_found(t.dim_b, value2)
        }
    };
    if let Some(t) = snapshot
        .cross_tabs
        .iter()
        .find(|t| (t.dim_a, t.dim_b) == (a, b))
    {
        return t
            .cell(&q.value, value2)
            .map(|(_, ids)| ids.to_vec())
            .ok_or_else(|| missing(t));
    }
    if let Some(t) = snapshot
        .cross_tabs
        .iter()
        .find(|t| (t.dim_a, t.dim_b) == (b, a))
    {
        return t
            .cell(value2, &q.value)
            .map(|(_, ids)| ids.to_vec())
            .ok_or_else(|| missing(t));
    }
    let heat = match (a, b) {
        (Dimension::Release, Dimension::Component) => snapshot.heatmap.cell(&q.value, value2),
        (Dimension::Component, Dimension::Release) => snapshot.heatmap.cell(value2, &q.value),
        _ => None,
    };
    if let Some((_, ids)) = heat {
        return Ok(ids.to_vec());
    }
    let t = cross_tab(
        &snapshot.reports,
        &snapshot.attributions,
        a,
        b,
        &snapshot.axis_order(),
    )
    .map_err(same_dim)?;
    t.cell(&q.value, value2)
        .map(|(_, ids)| ids.to_vec())
        .ok_or_else(|| missing(&t))
}

/// Newest first, ties by id.
fn summaries(snapshot: &AnalysisSnapshot, ids: &[String]) -> Vec<BugSummary> {
    let by_id: HashMap<&str, _> = snapshot
        .reports
        .iter()
        .map(|r| (r.bug_id.as_str(), r))
        .collect();
    let mut out: Vec<BugSummary> = ids
        .iter()
        .filter_map(|id| by_id.get(id.as_str()))
        .map(|r| BugSummary {
            bug_id: r.bug_id.clone(),
            title: r.title.clone(),
            severity: r.severity.clone(),
            status: r.status.clone(),
            created_at: r.created_at,
            tracker_url: r.tracker_url.clone(),
        })
        .collect();
    out.sort_by(|x, y| {
        y.created_at
            .cmp(&x.created_at)
            .then_with(|| x.bug_id.cmp(&y.bug_id))
    });
    out
}

async fn bugs(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<DrillDown>,
) -> Result<Response, ApiError> {
    let snapshot = load(&state, id).await?;
    let (count, page) = blocking({
        let snapshot = snapshot.clone();
        let q = q.clone();
        move || {
            let ids = drill_ids(&snapshot, &q)?;
            let all = summaries(&snapshot, &ids);
            let count = all.len();
            let page: Vec<BugSummary> = all
                .into_iter()
                .skip(q.offset.unwrap_or(0))
                .take(q.limit.unwrap_or(usize::MAX))
                .collect();
            Ok((count, page))
        }
    })
    .await?;
    with_snapshot(
        &snapshot.snapshot_id,
        json!({
            "dim": q.dim,
            "value": q.value,
            "dim2": q.dim2,
            "value2": q.value2,
            "count": count,
            "offset": q.offset.unwrap_or(0),
            "bugs": page,
        }),
    )
}

// ---------------------------------------------------------------------------
// Configuration

async fn put_component_map(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let config: ComponentMapConfig = serde_json::from_slice(&body)
        .map_err(|e| ApiError::unprocessable("invalid_body", e.to_string()))?;
    let map = ComponentMap::new(config)
        .map_err(|e| ApiError::unprocessable("invalid_config", e.to_string()))?;
    let path = state.config_dir.join(COMPONENT_MAP_FILE);
    let text =
        serde_json::to_vec_pretty(map.config()).map_err(|e| ApiError::internal(e.to_string()))?;
    blocking(move || write_atomic(&path, &text).map_err(|e| ApiError::internal(e.to_string())))
        .await?;
    log::info!(
        "component map replaced ({} components)",
        map.components().len()
    );
    Ok(Json(json!({
        "components": map.components().len(),
        "path_rules": map.config().path_table.len(),
        "repo_rules": map.config().repo_table.len(),
    }))
    .into_response())
}
