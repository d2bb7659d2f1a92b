//! HTTP session API for drawing markers and growing the network one layer
//! at a time.
//!
//! One process serves one session. Marker sets and the session state are
//! written to disk after every change, so a restarted server resumes where
//! the previous one stopped.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use flim_core::archlab::{ArchSession, EvalReport, HistoryEntry};
use flim_core::dataset::Dataset;
use flim_core::flim::{forward_prefix, ConvLayer, ConvLayerSpec, MarkerSet};
use flim_core::volcore::slice_extract;
use flim_core::{Error, Label};

use crate::commands::{load_splits, svm_params};
use crate::config::PipelineConfig;
use crate::render::{encode_png, window_slice};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn unprocessable(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (status, code) = match e {
            Error::UnknownVolume(_) => (StatusCode::NOT_FOUND, "unknown_volume"),
            Error::InvalidSpec(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_spec"),
            Error::InvalidCoord { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_coord"),
            Error::IndexOutOfRange { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "index_out_of_range"),
            Error::MissingMarkers(_) => (StatusCode::UNPROCESSABLE_ENTITY, "missing_markers"),
            Error::SpecNotEvaluated => (StatusCode::UNPROCESSABLE_ENTITY, "spec_not_evaluated"),
            Error::TooFewPatches { .. }
            | Error::InsufficientKernels { .. }
            | Error::RankDeficient { .. }
            | Error::ZeroCentroid(_)
            | Error::EmptyPatchSet
            | Error::SingleClassData => (StatusCode::UNPROCESSABLE_ENTITY, "training_failed"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self { status, code, message }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Idle,
    Training,
    Ready,
}

/// What readers see while a job may be holding the session.
#[derive(Debug, Clone)]
struct View {
    session: ArchSession,
    layers: Arc<Vec<ConvLayer>>,
    status: JobStatus,
    report: Option<EvalReport>,
    error: Option<String>,
}

pub struct AppState {
    data: Dataset,
    markers_dir: PathBuf,
    session_path: PathBuf,
    markers: RwLock<BTreeMap<String, MarkerSet>>,
    session: Mutex<ArchSession>,
    view: RwLock<View>,
    busy: AtomicBool,
}

/// Held while a training job runs; releases the session on drop.
pub struct TrainingGuard {
    state: Arc<AppState>,
}

impl Drop for TrainingGuard {
    fn drop(&mut self) {
        self.state.busy.store(false, Ordering::Release);
    }
}

fn lock_err<T>(_: T) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "a previous request panicked while holding session state")
}

impl AppState {
    /// Builds a session over `data`. Existing `<id>.markers.json` files in
    /// `markers_dir` are loaded; an existing session file replaces
    /// `session` and its accepted layers are retrained.
    pub fn new(data: Dataset, session: ArchSession, markers_dir: PathBuf, session_path: PathBuf) -> anyhow::Result<Arc<Self>> {
        let mut markers = BTreeMap::new();
        for id in data.volume_ids() {
            let path = markers_dir.join(format!("{id}.markers.json"));
            if path.exists() {
                markers.insert(id.clone(), MarkerSet::load(&path)?);
            }
        }
        let mut session = if session_path.exists() {
            ArchSession::load(&session_path).with_context(|| format!("loading session {}", session_path.display()))?
        } else {
            session
        };
        session.rebuild(&data, &markers).context("retraining accepted layers")?;
        let view = View {
            layers: Arc::new(session.layers().to_vec()),
            session: session.clone(),
            status: JobStatus::Idle,
            report: session.history.last().map(|h| h.report.clone()),
            error: None,
        };
        Ok(Arc::new(Self {
            data,
            markers_dir,
            session_path,
            markers: RwLock::new(markers),
            session: Mutex::new(session),
            view: RwLock::new(view),
            busy: AtomicBool::new(false),
        }))
    }

    /// Session for one split of a pipeline config: the split's marker and
    /// validation images, SVM trained on its SVM-train patients. State
    /// lives in `<models>/session.json`.
    pub fn from_config(cfg: &PipelineConfig, split: usize) -> anyhow::Result<Arc<Self>> {
        let data = Dataset::open(&cfg.data)?;
        let plans = load_splits(&cfg.splits)?;
        let plan = plans.iter().find(|p| p.split == split).with_context(|| format!("no split {split} in {}", cfg.splits.display()))?;
        let mut marker_images = Vec::new();
        for p in &plan.flim_marker {
            marker_images.extend(data.patient(p)?.volume_ids.iter().cloned());
        }
        let session = ArchSession::new(
            &data,
            marker_images,
            plan.flim_validation.clone(),
            plan.svm_train.clone(),
            svm_params(cfg, split),
        )?;
        Self::new(data, session, cfg.markers.clone(), cfg.models.join("session.json"))
    }

    /// Claims the session for a training job, or `None` if one is running.
    pub fn try_begin_training(self: &Arc<Self>) -> Option<TrainingGuard> {
        self.busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .ok()
            .map(|_| TrainingGuard { state: Arc::clone(self) })
    }

    pub fn status(&self) -> JobStatus {
        self.view.read().map(|v| v.status).unwrap_or(JobStatus::Idle)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/volumes", get(list_volumes))
        .route("/volumes/{id}/slice", get(volume_slice))
        .route("/volumes/{id}/markers", get(get_markers).put(put_markers))
        .route("/volumes/{id}/activations/{layer}/{kernel}/slice", get(activation_slice))
        .route("/session", get(get_session))
        .route("/session/status", get(get_status))
        .route("/session/layers", post(post_layer))
        .route("/session/layers/accept", post(accept_layer))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, host: &str, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await.with_context(|| format!("binding {host}:{port}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::unprocessable("invalid_json", e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeInfo {
    pub id: String,
    pub dims: [usize; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

async fn list_volumes(State(st): State<Arc<AppState>>) -> ApiResult<Json<Vec<VolumeInfo>>> {
    blocking(move || {
        let mut out = Vec::new();
        for p in st.data.patients() {
            for id in &p.volume_ids {
                out.push(VolumeInfo { id: id.clone(), dims: st.data.volume_dims(id)?, label: p.label });
            }
        }
        Ok(Json(out))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct SliceQuery {
    pub axis: usize,
    pub index: usize,
    pub window_lo: Option<f64>,
    pub window_hi: Option<f64>,
    #[serde(default)]
    pub channel: usize,
}

fn png_response(width: usize, height: usize, pixels: &[u8]) -> ApiResult<Response> {
    let bytes = encode_png(width, height, pixels).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

fn query<T>(q: Result<Query<T>, axum::extract::rejection::QueryRejection>) -> ApiResult<T> {
    q.map(|Query(t)| t).map_err(|e| ApiError::unprocessable("invalid_query", e.body_text()))
}

/// A plane of the volume windowed to 8 bits. Without an explicit window the
/// channel's full range is used.
async fn volume_slice(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    q: Result<Query<SliceQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let q = query(q)?;
    blocking(move || {
        let v = st.data.volume(&id)?;
        let slice = slice_extract(&v, q.axis, q.index, q.channel)?;
        let (lo, hi) = match (q.window_lo, q.window_hi) {
            (Some(lo), Some(hi)) => (lo, hi),
            (lo, hi) => {
                let (min, max) = v.channel(q.channel)?.min_max();
                (lo.unwrap_or(min), hi.unwrap_or(max))
            }
        };
        if !(lo < hi) {
            return Err(ApiError::unprocessable("invalid_window", format!("window [{lo}, {hi}] is empty")));
        }
        png_response(slice.width, slice.height, &window_slice(&slice, lo, hi))
    })
    .await
}

async fn get_markers(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    if !st.data.contains_volume(&id) {
        return Err(Error::UnknownVolume(id).into());
    }
    let markers = st.markers.read().map_err(lock_err)?;
    match markers.get(&id) {
        Some(set) => Ok(Json(set.clone()).into_response()),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, "no_markers", format!("volume {id} has no markers"))),
    }
}

/// Replaces the marker set of one volume, on disk and in memory, under one
/// write lock so readers never see a mix of two sets.
async fn put_markers(State(st): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<StatusCode> {
    let set: MarkerSet = parse_json(&body)?;
    blocking(move || {
        let dims = st.data.volume_dims(&id)?;
        if set.volume_id != id {
            return Err(ApiError::unprocessable("volume_mismatch", format!("body names volume {} but the path names {id}", set.volume_id)));
        }
        set.validate(dims)?;
        let mut markers = st.markers.write().map_err(lock_err)?;
        set.save(st.markers_dir.join(format!("{id}.markers.json")))?;
        markers.insert(id, set);
        Ok(StatusCode::NO_CONTENT)
    })
    .await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInfo {
    pub depth: usize,
    pub accepted: Vec<ConvLayerSpec>,
    pub history: Vec<HistoryEntry>,
    pub marker_images: Vec<String>,
    pub validation_images: Vec<String>,
    pub train_pool: Vec<String>,
    pub status: JobStatus,
}

async fn get_session(State(st): State<Arc<AppState>>) -> ApiResult<Json<SessionInfo>> {
    let v = st.view.read().map_err(lock_err)?;
    let s = &v.session;
    Ok(Json(SessionInfo {
        depth: s.depth(),
        accepted: s.accepted.clone(),
        history: s.history.clone(),
        marker_images: s.marker_images.clone(),
        validation_images: s.validation_images.clone(),
        train_pool: s.train_pool.clone(),
        status: v.status,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatusInfo {
    pub status: JobStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

async fn get_status(State(st): State<Arc<AppState>>) -> ApiResult<Json<StatusInfo>> {
    let v = st.view.read().map_err(lock_err)?;
    Ok(Json(StatusInfo { status: v.status, report: v.report.clone(), error: v.error.clone() }))
}

#[derive(Debug, Default, Deserialize)]
pub struct LayerQuery {
    #[serde(default, rename = "async")]
    pub run_async: bool,
}

impl AppState {
    fn set_status(&self, status: JobStatus) -> ApiResult<()> {
        self.view.write().map_err(lock_err)?.status = status;
        Ok(())
    }

    fn check_markers(&self) -> ApiResult<()> {
        let markers = self.markers.read().map_err(lock_err)?;
        let view = self.view.read().map_err(lock_err)?;
        match view.session.marker_images.iter().find(|id| !markers.contains_key(*id)) {
            Some(id) => Err(Error::MissingMarkers(id.clone()).into()),
            None => Ok(()),
        }
    }

    /// Runs `job` on the session, persists it and publishes the outcome.
    fn run_job<T>(&self, job: impl FnOnce(&mut ArchSession, &BTreeMap<String, MarkerSet>) -> flim_core::Result<T>) -> ApiResult<T> {
        let markers = self.markers.read().map_err(lock_err)?.clone();
        let mut session = self.session.lock().map_err(lock_err)?;
        let outcome = job(&mut session, &markers).map_err(ApiError::from).and_then(|t| {
            session.save(&self.session_path)?;
            Ok(t)
        });
        let mut view = self.view.write().map_err(lock_err)?;
        view.session = session.clone();
        view.layers = Arc::new(session.layers().to_vec());
        match &outcome {
            Ok(_) => {
                view.status = JobStatus::Ready;
                view.report = session.history.last().map(|h| h.report.clone());
                view.error = None;
            }
            Err(e) => {
                view.status = JobStatus::Idle;
                view.error = Some(e.message.clone());
            }
        }
        outcome
    }
}

/// Trains and scores a candidate layer. Answers with the report, or with
/// 202 right away when `?async=true`; poll `/session/status` then.
async fn post_layer(
    State(st): State<Arc<AppState>>,
    q: Result<Query<LayerQuery>, axum::extract::rejection::QueryRejection>,
    body: Bytes,
) -> ApiResult<Response> {
    let q = query(q)?;
    let spec: ConvLayerSpec = parse_json(&body)?;
    spec.validate()?;
    st.check_markers()?;
    let guard = st
        .try_begin_training()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "training_in_progress", "a training job is already running"))?;
    st.set_status(JobStatus::Training)?;
    let job = {
        let st = Arc::clone(&st);
        tokio::task::spawn_blocking(move || {
            let _guard = guard;
            st.run_job(|session, markers| session.evaluate_candidate(&st.data, markers, &spec))
        })
    };
    if q.run_async {
        return Ok((StatusCode::ACCEPTED, Json(serde_json::json!({ "status": JobStatus::Training }))).into_response());
    }
    let report = job.await.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(report).into_response())
}

/// Appends an evaluated spec to the network.
async fn accept_layer(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<StatusCode> {
    let spec: ConvLayerSpec = parse_json(&body)?;
    spec.validate()?;
    let guard = st
        .try_begin_training()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "training_in_progress", "a training job is already running"))?;
    st.set_status(JobStatus::Training)?;
    blocking(move || {
        let _guard = guard;
        st.run_job(|session, markers| session.accept_layer(&st.data, markers, &spec))
    })
    .await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Deserialize)]
pub struct ActivationQuery {
    pub axis: usize,
    pub index: usize,
}

/// One kernel's activation after accepted layer `layer` (1-based), windowed
/// to `[0, max]` of that channel. `axis`/`index` address the activation
/// map, which is smaller than the volume after pooling.
async fn activation_slice(
    State(st): State<Arc<AppState>>,
    Path((id, layer, kernel)): Path<(String, usize, usize)>,
    q: Result<Query<ActivationQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let q = query(q)?;
    let layers = Arc::clone(&st.view.read().map_err(lock_err)?.layers);
    if layer == 0 || layer > layers.len() {
        return Err(ApiError::unprocessable("invalid_layer", format!("layer {layer} outside 1..={}", layers.len())));
    }
    let k = layers[layer - 1].kernels.len();
    if kernel >= k {
        return Err(ApiError::unprocessable("invalid_kernel", format!("kernel {kernel} outside 0..{k}")));
    }
    blocking(move || {
        let v = st.data.volume(&id)?;
        let act = forward_prefix(&layers[..layer], &v)?;
        let channel = act.channel(kernel)?;
        let (_, max) = channel.min_max();
        let slice = slice_extract(&channel, q.axis, q.index, 0)?;
        png_response(slice.width, slice.height, &window_slice(&slice, 0.0, max))
    })
    .await
}
