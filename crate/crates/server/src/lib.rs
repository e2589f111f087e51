//! HTTP/JSON API over one discrepancy-field session.
//!
//! Reads run concurrently; mutations (new iterations, new regions) are
//! serialized by a write lock, applied to a copy, saved, and only then made
//! visible. All payloads use the rounded export formatting.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;

use discrepancy_core::export::{to_rounded_json, xyz, FieldExport, GridRecord};
use discrepancy_core::mitigation::MitigationReport;
use discrepancy_core::session::RegionStats;
use discrepancy_core::{
    save_session, Error, FieldStats, IterationRecord, MarkedRegion, Mitigation, MitigationKind, PointCloud,
    RegistrationResult, Session, VoxelKey,
};

/// Largest point count `/api/clouds` returns when no decimation is given.
pub const DEFAULT_POINT_BUDGET: usize = 100_000;

pub struct AppState {
    session: RwLock<Session>,
    /// Where mutations are persisted; `None` keeps them in memory.
    path: Option<PathBuf>,
}

impl AppState {
    pub fn new(session: Session, path: Option<PathBuf>) -> Arc<Self> {
        Arc::new(AppState { session: RwLock::new(session), path })
    }

    pub async fn snapshot(&self) -> Session {
        self.session.read().await.clone()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/session", get(get_session))
        .route("/api/field/{iteration}", get(get_field))
        .route("/api/clouds/{iteration}", get(get_clouds))
        .route("/api/iterations", axum::routing::post(post_iteration))
        .route("/api/regions", get(get_regions).post(post_region))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::InvalidParameter(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_parameter"),
            Error::InvalidVoxelKey { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_voxel_key"),
            Error::NoSuchIteration(_) => (StatusCode::NOT_FOUND, "not_found"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status;
        json_response(status, &self)
    }
}

fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    match to_rounded_json(body) {
        Ok(text) => (status, [(header::CONTENT_TYPE, "application/json")], text).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

type ApiResult = Result<Response, ApiError>;

#[derive(Debug, Serialize)]
struct RemovedCount {
    kind: MitigationKind,
    cloud1: usize,
    cloud2: usize,
}

fn removed_counts(reports: &[MitigationReport]) -> Vec<RemovedCount> {
    reports
        .iter()
        .map(|r| RemovedCount { kind: r.kind, cloud1: r.removed_from_cloud1, cloud2: r.removed_from_cloud2 })
        .collect()
}

#[derive(Debug, Serialize)]
struct HistoryEntry<'a> {
    iteration: usize,
    mitigations: &'a [Mitigation],
    note: &'a str,
    stats: FieldStats,
    removed: Vec<RemovedCount>,
}

#[derive(Debug, Serialize)]
struct SessionSummary<'a> {
    iteration_count: usize,
    grid: GridRecord,
    min_points: usize,
    registration: &'a RegistrationResult,
    cloud1_points: usize,
    cloud2_points: usize,
    region_count: usize,
    history: Vec<HistoryEntry<'a>>,
}

async fn get_session(State(state): State<Arc<AppState>>) -> ApiResult {
    let s = state.session.read().await;
    let summary = SessionSummary {
        iteration_count: s.iterations.len(),
        grid: GridRecord::from(&s.grid),
        min_points: s.min_points,
        registration: &s.registration,
        cloud1_points: s.cloud1_raw.len(),
        cloud2_points: s.cloud2_raw.len(),
        region_count: s.regions.len(),
        history: s
            .iterations
            .iter()
            .enumerate()
            .map(|(i, r)| HistoryEntry {
                iteration: i,
                mitigations: &r.mitigations,
                note: &r.note,
                stats: r.field.stats,
                removed: removed_counts(&r.reports),
            })
            .collect(),
    };
    Ok(json_response(StatusCode::OK, &summary))
}

async fn get_field(State(state): State<Arc<AppState>>, Path(iteration): Path<usize>) -> ApiResult {
    let s = state.session.read().await;
    let rec = s.iteration(iteration)?;
    Ok(json_response(StatusCode::OK, &FieldExport::new(&rec.field, Some(iteration), &rec.mitigations)))
}

#[derive(Debug, Deserialize)]
struct CloudQuery {
    decimate: Option<usize>,
}

#[derive(Debug, Serialize)]
struct CloudSamples {
    sensor_origin: [f64; 3],
    total_points: usize,
    /// Raw index of each returned sample.
    indices: Vec<usize>,
    points: Vec<[f64; 3]>,
    /// Step of the mitigation list that removed the sample, or null if it
    /// survives this iteration.
    removed_by: Vec<Option<usize>>,
}

#[derive(Debug, Serialize)]
struct CloudsPayload<'a> {
    iteration: usize,
    decimate: usize,
    mitigations: &'a [Mitigation],
    cloud1: CloudSamples,
    cloud2: CloudSamples,
}

fn samples(cloud: &PointCloud, removed: impl Iterator<Item = (usize, Vec<usize>)>, step: usize) -> CloudSamples {
    let mut by = vec![None; cloud.len()];
    for (k, indices) in removed {
        for i in indices {
            if let Some(slot) = by.get_mut(i) {
                *slot = Some(k);
            }
        }
    }
    let indices: Vec<usize> = (0..cloud.len()).step_by(step).collect();
    CloudSamples {
        sensor_origin: xyz(cloud.sensor_origin()),
        total_points: cloud.len(),
        points: indices.iter().map(|&i| xyz(cloud.points[i])).collect(),
        removed_by: indices.iter().map(|&i| by[i]).collect(),
        indices,
    }
}

async fn get_clouds(
    State(state): State<Arc<AppState>>,
    Path(iteration): Path<usize>,
    query: Result<Query<CloudQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult {
    let Query(query) = query.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text()))?;
    let s = state.session.read().await;
    let rec = s.iteration(iteration)?;
    let total = s.cloud1_raw.len() + s.cloud2_raw.len();
    let step = match query.decimate {
        Some(0) => return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "decimate must be at least 1")),
        Some(n) => n,
        None => total.div_ceil(DEFAULT_POINT_BUDGET).max(1),
    };
    let cloud1 = PointCloud {
        points: s.cloud1_raw.points.clone(),
        sensor_pose: discrepancy_core::RigidTransform::IDENTITY,
        label: s.cloud1_raw.label.clone(),
    };
    let reports = &rec.reports;
    let payload = CloudsPayload {
        iteration,
        decimate: step,
        mitigations: &rec.mitigations,
        cloud1: samples(&cloud1, reports.iter().enumerate().map(|(k, r)| (k, r.removed_indices1.clone())), step),
        cloud2: samples(
            s.cloud2_registered(),
            reports.iter().enumerate().map(|(k, r)| (k, r.removed_indices2.clone())),
            step,
        ),
    };
    Ok(json_response(StatusCode::OK, &payload))
}

/// A mitigation either in full JSON form or as the command-line string,
/// e.g. `"fov:el_min=-22,el_max=10"`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MitigationInput {
    Full(Mitigation),
    Text(String),
}

#[derive(Debug, Deserialize)]
struct IterationRequest {
    mitigation: Option<MitigationInput>,
    #[serde(default)]
    note: String,
}

#[derive(Debug, Serialize)]
struct IterationView {
    iteration: usize,
    mitigations: Vec<Mitigation>,
    note: String,
    stats: FieldStats,
    removed: Vec<RemovedCount>,
    field: FieldExport,
}

impl IterationView {
    fn new(iteration: usize, rec: &IterationRecord) -> Self {
        IterationView {
            iteration,
            mitigations: rec.mitigations.clone(),
            note: rec.note.clone(),
            stats: rec.field.stats,
            removed: removed_counts(&rec.reports),
            field: FieldExport::new(&rec.field, Some(iteration), &rec.mitigations),
        }
    }
}

/// Apply `change` to a copy of the session, persist it, then publish it.
async fn mutate<T, F>(state: &AppState, change: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> Result<T, Error> + Send + 'static,
{
    let mut guard = state.session.write().await;
    let mut next = guard.clone();
    let path = state.path.clone();
    let (next, out) = tokio::task::spawn_blocking(move || {
        let out = change(&mut next).and_then(|v| {
            if let Some(p) = &path {
                save_session(&next, p)?;
            }
            Ok(v)
        });
        (next, out)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    let out = out?;
    *guard = next;
    Ok(out)
}

async fn post_iteration(
    State(state): State<Arc<AppState>>,
    body: Result<Json<IterationRequest>, JsonRejection>,
) -> ApiResult {
    let Json(req) = body?;
    let mitigation = match req.mitigation {
        None => None,
        Some(MitigationInput::Full(m)) => Some(m),
        Some(MitigationInput::Text(t)) => Some(Mitigation::parse_cli(&t)?),
    };
    let view = mutate(&state, move |s| {
        s.run_iteration(mitigation, req.note)?;
        let i = s.iterations.len() - 1;
        Ok(IterationView::new(i, &s.iterations[i]))
    })
    .await?;
    Ok(json_response(StatusCode::CREATED, &view))
}

#[derive(Debug, Deserialize)]
struct RegionRequest {
    label: String,
    voxel_keys: Vec<VoxelKey>,
}

#[derive(Debug, Serialize)]
struct RegionView {
    index: usize,
    label: String,
    voxel_keys: Vec<VoxelKey>,
    created_at_iteration: usize,
    /// The region's magnitudes in every recorded iteration.
    history: Vec<RegionStats>,
}

fn region_view(s: &Session, index: usize, r: &MarkedRegion) -> Result<RegionView, Error> {
    let history = (0..s.iterations.len()).map(|i| s.region_stats(r, i)).collect::<Result<_, _>>()?;
    Ok(RegionView {
        index,
        label: r.label.clone(),
        voxel_keys: r.voxel_keys.clone(),
        created_at_iteration: r.created_at_iteration,
        history,
    })
}

async fn post_region(State(state): State<Arc<AppState>>, body: Result<Json<RegionRequest>, JsonRejection>) -> ApiResult {
    let Json(req) = body?;
    let view = mutate(&state, move |s| {
        s.mark_region(req.label, &req.voxel_keys)?;
        let i = s.regions.len() - 1;
        region_view(s, i, &s.regions[i])
    })
    .await?;
    Ok(json_response(StatusCode::CREATED, &view))
}

async fn get_regions(State(state): State<Arc<AppState>>) -> ApiResult {
    let s = state.session.read().await;
    let views = s
        .regions
        .iter()
        .enumerate()
        .map(|(i, r)| region_view(&s, i, r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(json_response(StatusCode::OK, &views))
}
