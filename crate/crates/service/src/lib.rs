//! HTTP facade over the extraction library.
//!
//! Every request may carry an `x-session-id` header; requests without one
//! open a new session and the id comes back in the same header.

pub mod session;

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use scenario_core::criticality::{CriticalityConfig, MetricParams, PoolEntry};
use scenario_core::interval::FrameInterval;
use scenario_core::par::Execution;
use scenario_core::pipeline::{
    scenario_frames, scenario_id, score_matches, ExportFormat, FrameState, PipelineConfig,
    PipelineError,
};
use scenario_core::schema::{validate_query, ScenarioQuery};
use scenario_core::search::{disambiguate_report, find_candidates, Explanation, SearchParams};
use scenario_core::store::{parse_tracks_csv, RecordingConfig, TrajectoryStore};
use scenario_core::understanding::{
    interpret_offline, interpret_remote, CompletionClient, HttpCompletionClient, InterpretError,
    Provider, ProviderConfig,
};
use serde::{Deserialize, Serialize};
use session::{persist, SessionStore, StoredScenario};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;
use thiserror::Error;

pub const SESSION_HEADER: &str = "x-session-id";

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("{message}")]
    Provider {
        message: String,
        raw_response: Option<String>,
    },
    #[error("{0}")]
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    raw_response: Option<&'a str>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Provider { .. } => StatusCode::BAD_GATEWAY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let raw = match &self {
            ApiError::Provider { raw_response, .. } => raw_response.as_deref(),
            _ => None,
        };
        let body = ErrorBody {
            error: self.to_string(),
            raw_response: raw,
        };
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub idle_timeout: Duration,
    pub data_dir: Option<PathBuf>,
    pub provider: ProviderConfig,
    pub max_upload_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            idle_timeout: Duration::from_secs(3600),
            data_dir: None,
            provider: ProviderConfig::from_env(),
            max_upload_bytes: 1 << 30,
        }
    }
}

struct Inner {
    sessions: Mutex<SessionStore>,
    provider: ProviderConfig,
    client: Option<Arc<dyn CompletionClient>>,
    max_upload_bytes: usize,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self::build(config, None)
    }

    /// Remote interpretation goes through `client` instead of HTTP.
    pub fn with_client(config: ServiceConfig, client: Arc<dyn CompletionClient>) -> Self {
        Self::build(config, Some(client))
    }

    fn build(config: ServiceConfig, client: Option<Arc<dyn CompletionClient>>) -> Self {
        Self {
            inner: Arc::new(Inner {
                sessions: Mutex::new(SessionStore::new(config.idle_timeout, config.data_dir)),
                provider: config.provider,
                client,
                max_upload_bytes: config.max_upload_bytes,
            }),
        }
    }

    fn sessions(&self) -> std::sync::MutexGuard<'_, SessionStore> {
        self.inner
            .sessions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
    }

    /// Runs `f` on the request's session; returns the session id too.
    fn with_session<R>(
        &self,
        headers: &HeaderMap,
        f: impl FnOnce(&mut session::Session, Option<PathBuf>) -> Result<R, ApiError>,
    ) -> Result<(String, R), ApiError> {
        let token = headers
            .get(SESSION_HEADER)
            .map(|v| v.to_str().map_err(|_| ApiError::BadRequest("bad session header".into())))
            .transpose()?;
        let mut store = self.sessions();
        let id = store
            .open(token)
            .map(|s| s.id.clone())
            .ok_or_else(|| ApiError::NotFound("unknown or expired session".into()))?;
        let dir = store.session_dir(&id);
        let s = store.open(Some(&id)).expect("just opened");
        let r = f(s, dir)?;
        Ok((id, r))
    }
}

fn with_header(session: &str, resp: impl IntoResponse) -> Response {
    let mut resp = resp.into_response();
    if let Ok(v) = HeaderValue::from_str(session) {
        resp.headers_mut().insert(SESSION_HEADER, v);
    }
    resp
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> T + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))
}

pub fn router(state: AppState) -> Router {
    let limit = state.inner.max_upload_bytes;
    Router::new()
        .route("/api/health", get(|| async { "ok" }))
        .route("/api/recordings", post(upload_recording))
        .route("/api/interpret", post(interpret))
        .route("/api/search", post(search))
        .route("/api/scenarios/{id}/frames", get(frames))
        .route("/api/scenarios/{id}/export", get(export))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RecordingSummary {
    pub recording_id: String,
    pub track_count: usize,
    pub frame_range: Option<FrameInterval>,
}

async fn upload_recording(
    State(state): State<AppState>,
    headers: HeaderMap,
    mut multipart: Multipart,
) -> Result<Response, ApiError> {
    let mut csv: Option<Vec<u8>> = None;
    let mut config: Option<RecordingConfig> = None;
    let mut recording_id: Option<String> = None;
    let mut frame_rate: Option<f64> = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::BadRequest(e.to_string()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::BadRequest(e.to_string()))?;
        let text = || String::from_utf8_lossy(&bytes).trim().to_string();
        match name.as_str() {
            "file" | "tracks" => csv = Some(bytes.to_vec()),
            "config" => {
                config = Some(
                    serde_json::from_slice(&bytes)
                        .map_err(|e| ApiError::BadRequest(format!("config: {e}")))?,
                )
            }
            "recording_id" => recording_id = Some(text()),
            "frame_rate" => {
                frame_rate = Some(
                    text()
                        .parse()
                        .map_err(|_| ApiError::BadRequest(format!("frame_rate `{}`", text())))?,
                )
            }
            other => log::debug!("ignoring multipart field `{other}`"),
        }
    }
    let csv = csv.ok_or_else(|| ApiError::BadRequest("multipart field `file` is required".into()))?;
    let (session, existing) =
        state.with_session(&headers, |s, _| Ok(s.recordings.len()))?;
    let mut config = config.unwrap_or_default();
    if let Some(id) = recording_id {
        config.recording_id = id;
    } else if config.recording_id == RecordingConfig::default().recording_id {
        config.recording_id = format!("rec{}", existing + 1);
    }
    if let Some(fr) = frame_rate {
        config.frame_rate = fr;
    }
    let bytes = csv.clone();
    let store = blocking(move || parse_tracks_csv(bytes.as_slice(), config))
        .await?
        .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let summary = RecordingSummary {
        recording_id: store.recording_id().to_string(),
        track_count: store.len(),
        frame_range: store.frame_range(),
    };
    let mut h = HeaderMap::new();
    h.insert(SESSION_HEADER, HeaderValue::from_str(&session).expect("ascii id"));
    state.with_session(&h, |s, dir| {
        if s.recordings.contains_key(&summary.recording_id) {
            return Err(ApiError::Conflict(format!(
                "recording `{}` already loaded",
                summary.recording_id
            )));
        }
        persist(dir.as_deref(), &format!("{}.csv", summary.recording_id), &csv);
        s.recordings
            .insert(summary.recording_id.clone(), Arc::new(store));
        Ok(())
    })?;
    Ok(with_header(&session, (StatusCode::CREATED, Json(summary))))
}

#[derive(Debug, Deserialize)]
pub struct InterpretRequest {
    pub description: String,
    #[serde(default)]
    pub provider: Option<String>,
}

fn interpret_error(e: InterpretError) -> ApiError {
    match e {
        InterpretError::Provider {
            ref last_response, ..
        } => ApiError::Provider {
            message: e.to_string(),
            raw_response: last_response.clone(),
        },
        InterpretError::Credential(_) => ApiError::Provider {
            message: e.to_string(),
            raw_response: None,
        },
        InterpretError::Config(m) => ApiError::Internal(m),
        other => ApiError::BadRequest(other.to_string()),
    }
}

async fn interpret(
    State(state): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<InterpretRequest>,
) -> Result<Response, ApiError> {
    let provider: Provider = req
        .provider
        .as_deref()
        .unwrap_or("offline")
        .parse()
        .map_err(ApiError::BadRequest)?;
    let (session, ()) = state.with_session(&headers, |_, _| Ok(()))?;
    let description = req.description;
    let query = match provider {
        Provider::Offline => interpret_offline(&description).map_err(interpret_error)?,
        Provider::Remote => {
            let cfg = state.inner.provider.clone();
            let client: Arc<dyn CompletionClient> = match &state.inner.client {
                Some(c) => c.clone(),
                None => Arc::new(HttpCompletionClient::new(cfg.clone()).map_err(interpret_error)?),
            };
            blocking(move || interpret_remote(&description, client.as_ref(), cfg.max_retries))
                .await?
                .map_err(interpret_error)?
                .0
        }
    };
    let mut h = HeaderMap::new();
    h.insert(SESSION_HEADER, HeaderValue::from_str(&session).expect("ascii id"));
    state.with_session(&h, |s, _| {
        s.queries.push(query.clone());
        Ok(())
    })?;
    Ok(with_header(&session, Json(query)))
}

#[derive(Debug, Deserialize)]
pub struct SearchRequest {
    pub recording_id: String,
    pub query: ScenarioQuery,
    #[serde(default)]
    pub search_params: SearchParams,
    #[serde(default)]
    pub criticality_config: Option<CriticalityConfig>,
    #[serde(default)]
    pub metric_params: MetricParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRow {
    pub scenario_id: String,
    #[serde(flatten)]
    pub entry: PoolEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub recording_id: String,
    pub pool: Vec<PoolRow>,
    pub rejected_near_misses: Vec<Explanation>,
}

/// Pool and near misses exactly as the library computes them.
pub fn run_search(store: &TrajectoryStore, req: &SearchRequest) -> Result<SearchResponse, ApiError> {
    let config = PipelineConfig {
        recording: store.config().clone(),
        search: req.search_params,
        criticality: req.criticality_config,
        metric_params: req.metric_params,
        ..PipelineConfig::default()
    };
    let entries = score_matches(store, &req.query, &config).map_err(|e| match e {
        PipelineError::Schema(_) | PipelineError::Config(_) => ApiError::BadRequest(e.to_string()),
        other => ApiError::Internal(other.to_string()),
    })?;
    let validated = validate_query(req.query.clone()).expect("checked by score_matches");
    let candidates = find_candidates(store, &validated, &req.search_params, Execution::default());
    let rejected_near_misses = disambiguate_report(
        &req.query,
        &req.search_params,
        store.frame_rate(),
        &candidates,
    )
    .into_iter()
    .filter(|e| !e.reasons.is_empty())
    .collect();
    Ok(SearchResponse {
        recording_id: store.recording_id().to_string(),
        pool: entries
            .into_iter()
            .map(|entry| PoolRow {
                scenario_id: scenario_id(&entry.scenario),
                entry,
            })
            .collect(),
        rejected_near_misses,
    })
}

async fn search(
    State(state): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<SearchRequest>,
) -> Result<Response, ApiError> {
    let (session, store) = state.with_session(&headers, |s, _| {
        s.recordings
            .get(&req.recording_id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown recording `{}`", req.recording_id)))
    })?;
    let query = req.query.clone();
    let resp = blocking(move || run_search(&store, &req)).await??;
    let mut h = HeaderMap::new();
    h.insert(SESSION_HEADER, HeaderValue::from_str(&session).expect("ascii id"));
    state.with_session(&h, |s, dir| {
        s.queries.push(query);
        s.searches += 1;
        for row in &resp.pool {
            s.scenarios.insert(
                row.scenario_id.clone(),
                StoredScenario {
                    recording_id: resp.recording_id.clone(),
                    entry: row.entry.clone(),
                },
            );
        }
        if dir.is_some() {
            let json = serde_json::to_vec_pretty(&resp).unwrap_or_default();
            persist(dir.as_deref(), &format!("pool-{}.json", s.searches), &json);
        }
        Ok(())
    })?;
    Ok(with_header(&session, Json(resp)))
}

fn lookup(
    state: &AppState,
    headers: &HeaderMap,
    id: &str,
) -> Result<(String, (StoredScenario, Arc<TrajectoryStore>)), ApiError> {
    state.with_session(headers, |s, _| {
        let sc = s
            .scenarios
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown scenario `{id}`")))?;
        let store = s
            .recordings
            .get(&sc.recording_id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown recording `{}`", sc.recording_id)))?;
        Ok((sc, store))
    })
}

#[derive(Debug, Deserialize)]
pub struct FramesParams {
    #[serde(default)]
    pub stride: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FramesResponse {
    pub scenario_id: String,
    pub stride: u32,
    pub frames: Vec<FrameState>,
}

async fn frames(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(params): Query<FramesParams>,
) -> Result<Response, ApiError> {
    let stride = params.stride.unwrap_or(1);
    if stride == 0 {
        return Err(ApiError::BadRequest("stride must be at least 1".into()));
    }
    let (session, (sc, store)) = lookup(&state, &headers, &id)?;
    let frames = scenario_frames(&sc.entry, &store, stride);
    Ok(with_header(
        &session,
        Json(FramesResponse {
            scenario_id: id,
            stride,
            frames,
        }),
    ))
}

#[derive(Debug, Deserialize)]
pub struct ExportParams {
    pub format: Option<String>,
}

async fn export(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(params): Query<ExportParams>,
) -> Result<Response, ApiError> {
    let format: ExportFormat = params
        .format
        .as_deref()
        .ok_or_else(|| ApiError::BadRequest("query parameter `format` is required".into()))?
        .parse()
        .map_err(ApiError::BadRequest)?;
    let (session, (sc, store)) = lookup(&state, &headers, &id)?;
    let body = format
        .render(&sc.entry.scenario, &store, &Default::default())
        .map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    let disposition = format!("attachment; filename=\"{id}.{}\"", format.extension());
    Ok(with_header(
        &session,
        (
            [
                (header::CONTENT_TYPE, format.content_type().to_string()),
                (header::CONTENT_DISPOSITION, disposition),
            ],
            body,
        ),
    ))
}
