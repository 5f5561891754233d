//! Device HTTP service backing the operator console.

use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use smearscan_core::hash::{content_hash, is_content_hash};
use smearscan_core::imaging::{encode_image, ImageFormat, RasterImage};
use smearscan_core::pipeline::{PipelineConfig, ScreeningOutput, ScreeningResult};
use smearscan_store::store::StateCounts;
use smearscan_store::{sync_once, HttpTransport, SlideRecord, Store, StoreError, SyncError, SyncOptions, SyncReport};

use crate::backends::Backends;
use crate::camera::{CameraError, CameraSource};
use crate::config::{CameraKind, Config};
use crate::screening::screen_frame;

const FRAME_CACHE_LIMIT: usize = 64;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub pipeline: PipelineConfig,
    pub backends: Backends,
    pub sync_endpoint: Option<String>,
    pub sync_token: Option<String>,
    pub sync_timeout: Duration,
    pub static_dir: Option<PathBuf>,
}

impl ServiceOptions {
    pub fn from_config(cfg: &Config) -> Self {
        ServiceOptions {
            pipeline: cfg.pipeline_config(),
            backends: Backends::from_config(cfg),
            sync_endpoint: cfg.sync.endpoint.clone(),
            sync_token: std::env::var(smearscan_store::SYNC_TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            sync_timeout: Duration::from_secs(10),
            static_dir: cfg.server.static_dir.clone(),
        }
    }
}

struct Captured {
    frame: String,
    slide: RasterImage,
    slide_ref: String,
    output: ScreeningOutput,
}

#[derive(Default)]
struct Session {
    last: Option<Arc<Captured>>,
    unsaved: bool,
    preview_ref: Option<String>,
    last_record: Option<String>,
    last_sync: Option<SyncReport>,
}

#[derive(Default)]
struct FrameCache {
    order: VecDeque<String>,
    bytes: HashMap<String, Arc<Vec<u8>>>,
    /// Frame path of the cached preview, to skip re-encoding.
    preview_path: Option<(PathBuf, String)>,
}

impl FrameCache {
    fn insert(&mut self, png: Vec<u8>) -> String {
        let hash = content_hash(&png);
        if !self.bytes.contains_key(&hash) {
            self.bytes.insert(hash.clone(), Arc::new(png));
            self.order.push_back(hash.clone());
            while self.order.len() > FRAME_CACHE_LIMIT {
                if let Some(old) = self.order.pop_front() {
                    self.bytes.remove(&old);
                }
            }
        }
        hash
    }
}

pub struct AppState {
    opts: ServiceOptions,
    store: Arc<Store>,
    camera: Mutex<CameraSource>,
    session: Mutex<Session>,
    frames: Mutex<FrameCache>,
    capture_lock: tokio::sync::Mutex<()>,
    sync_lock: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(opts: ServiceOptions, store: Arc<Store>, camera: CameraSource) -> Self {
        AppState {
            opts,
            store,
            camera: Mutex::new(camera),
            session: Mutex::new(Session::default()),
            frames: Mutex::new(FrameCache::default()),
            capture_lock: tokio::sync::Mutex::new(()),
            sync_lock: tokio::sync::Mutex::new(()),
        }
    }

    pub fn from_config(cfg: &Config) -> Result<Self, ServiceError> {
        cfg.validate().map_err(|e| ServiceError::BadConfig(e.to_string()))?;
        let store = Store::open(&cfg.store.path).map_err(|e| ServiceError::BadConfig(format!("store: {e}")))?;
        let camera = CameraSource::open(cfg.camera.kind, &cfg.camera.path).map_err(|e| ServiceError::BadConfig(e.to_string()))?;
        Ok(Self::new(ServiceOptions::from_config(cfg), Arc::new(store), camera))
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn has_unsaved_result(&self) -> bool {
        self.session.lock().unwrap().unsaved
    }
}

fn error(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": code, "message": message.into() }))).into_response()
}

fn camera_error(e: CameraError) -> Response {
    match e {
        CameraError::EndOfFrames => error(StatusCode::CONFLICT, "end_of_frames", "no slide frame available"),
        other => error(StatusCode::INTERNAL_SERVER_ERROR, "camera", other.to_string()),
    }
}

fn internal(e: impl std::fmt::Display) -> Response {
    error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
}

/// Parse an optional JSON object body. Empty bodies are accepted.
#[allow(clippy::result_large_err)]
fn optional_object<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> Result<T, Response> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| error(StatusCode::BAD_REQUEST, "bad_request", format!("malformed JSON body: {e}")))
}

fn png_response(hash: &str, bytes: Arc<Vec<u8>>) -> Response {
    (
        [
            (header::CONTENT_TYPE, "image/png".to_string()),
            (header::CACHE_CONTROL, "no-store".to_string()),
            (header::HeaderName::from_static("x-frame-ref"), hash.to_string()),
        ],
        bytes.as_ref().clone(),
    )
        .into_response()
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn preview(State(state): State<Arc<AppState>>) -> Response {
    let path = {
        let cam = state.camera.lock().unwrap();
        match cam.peek() {
            Ok(f) => f,
            Err(e) => return camera_error(e),
        }
    };
    let cached = {
        let frames = state.frames.lock().unwrap();
        frames
            .preview_path
            .as_ref()
            .filter(|(p, _)| *p == path.path)
            .and_then(|(_, h)| frames.bytes.get(h).map(|b| (h.clone(), b.clone())))
    };
    let (hash, bytes) = match cached {
        Some(hit) => hit,
        None => {
            let png = encode_image(&path.image, ImageFormat::Png);
            let mut frames = state.frames.lock().unwrap();
            let h = frames.insert(png);
            frames.preview_path = Some((path.path.clone(), h.clone()));
            let b = frames.bytes[&h].clone();
            (h, b)
        }
    };
    state.session.lock().unwrap().preview_ref = Some(hash.clone());
    png_response(&hash, bytes)
}

#[derive(Serialize)]
struct CaptureReply<'a> {
    #[serde(flatten)]
    result: &'a ScreeningResult,
    slide_ref: &'a str,
    frame: &'a str,
    parasitemia_display: String,
}

async fn capture(State(state): State<Arc<AppState>>) -> Response {
    let _serial = state.capture_lock.lock().await;
    let frame = match state.camera.lock().unwrap().next_frame() {
        Ok(f) => f,
        Err(e) => return camera_error(e),
    };
    let opts = state.opts.clone();
    let job = tokio::task::spawn_blocking(move || {
        let out = screen_frame(&opts.backends, &opts.pipeline, &frame.path, &frame.image);
        (frame, out)
    });
    let (frame, output) = match job.await {
        Ok((f, Ok(out))) => (f, out),
        Ok((_, Err(e))) => return error(StatusCode::INTERNAL_SERVER_ERROR, "pipeline", e.to_string()),
        Err(e) => return internal(e),
    };
    let slide_png = encode_image(&frame.image, ImageFormat::Png);
    let slide_ref = {
        let mut frames = state.frames.lock().unwrap();
        frames.insert(output.overlay_png.clone());
        frames.insert(slide_png)
    };
    let captured = Arc::new(Captured { frame: frame.name, slide: frame.image, slide_ref, output });
    {
        let mut session = state.session.lock().unwrap();
        if session.unsaved {
            if let Some(prev) = &session.last {
                log::info!("discarding unsaved result for frame {}", prev.frame);
            }
        }
        session.last = Some(captured.clone());
        session.unsaved = true;
    }
    let reply = CaptureReply {
        result: &captured.output.result,
        slide_ref: &captured.slide_ref,
        frame: &captured.frame,
        parasitemia_display: captured.output.result.parasitemia_display(),
    };
    Json(reply).into_response()
}

async fn frame(State(state): State<Arc<AppState>>, UrlPath(hash): UrlPath<String>) -> Response {
    if !is_content_hash(&hash) {
        return error(StatusCode::BAD_REQUEST, "bad_request", "frame refs are sha256 hex digests");
    }
    if let Some(bytes) = state.frames.lock().unwrap().bytes.get(&hash).cloned() {
        return png_response(&hash, bytes);
    }
    match state.store.blob(&hash) {
        Ok(bytes) => png_response(&hash, Arc::new(bytes)),
        Err(StoreError::MissingBlob(_)) => error(StatusCode::NOT_FOUND, "not_found", "unknown frame"),
        Err(e) => internal(e),
    }
}

#[derive(Debug, Serialize)]
pub struct RecordSummary {
    pub record_id: String,
    pub created_at: String,
    pub sync_state: smearscan_store::SyncState,
    pub infected_count: usize,
    pub uninfected_count: usize,
    pub parasitemia_pct: f64,
    pub wbc_count: usize,
    pub platelet_count: usize,
    pub slide_blob: String,
    pub overlay_blob: Option<String>,
}

impl From<&SlideRecord> for RecordSummary {
    fn from(r: &SlideRecord) -> Self {
        let res = &r.doc.result;
        RecordSummary {
            record_id: r.doc.record_id.clone(),
            created_at: r.doc.created_at.clone(),
            sync_state: r.sync_state.clone(),
            infected_count: res.infected_count,
            uninfected_count: res.uninfected_count,
            parasitemia_pct: res.parasitemia_pct,
            wbc_count: res.wbc_count,
            platelet_count: res.platelet_count,
            slide_blob: r.doc.slide_blob.clone(),
            overlay_blob: r.doc.overlay_blob.clone(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SaveRequest {
    /// When given, must match the overlay of the result under review.
    overlay_ref: Option<String>,
}

async fn save_record(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: SaveRequest = match optional_object(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let captured = {
        let session = state.session.lock().unwrap();
        match (&session.last, session.unsaved) {
            (Some(c), true) => c.clone(),
            _ => return error(StatusCode::CONFLICT, "nothing_to_save", "no unsaved result"),
        }
    };
    if let Some(want) = &req.overlay_ref {
        if *want != captured.output.result.overlay_ref {
            return error(StatusCode::CONFLICT, "stale_result", "overlay_ref does not match the result under review");
        }
    }
    let store = state.store.clone();
    let c = captured.clone();
    let saved = tokio::task::spawn_blocking(move || store.save_screening(&c.slide, &c.output)).await;
    match saved {
        Ok(Ok(record)) => {
            let mut session = state.session.lock().unwrap();
            if session.last.as_ref().is_some_and(|l| Arc::ptr_eq(l, &captured)) {
                session.unsaved = false;
            }
            session.last_record = Some(record.doc.record_id.clone());
            (StatusCode::CREATED, Json(RecordSummary::from(&record))).into_response()
        }
        Ok(Err(StoreError::StorageFull)) => error(StatusCode::INSUFFICIENT_STORAGE, "storage_full", "device storage is full"),
        Ok(Err(e)) => internal(e),
        Err(e) => internal(e),
    }
}

#[derive(Debug, Deserialize)]
struct RecordQuery {
    state: Option<String>,
}

async fn list_records(State(state): State<Arc<AppState>>, Query(q): Query<RecordQuery>) -> Response {
    let records = match q.state.as_deref() {
        None | Some("") | Some("all") => state.store.records(),
        Some(s @ ("pending" | "uploading" | "synced" | "failed")) => state.store.records_in_state(s),
        Some(other) => {
            return error(StatusCode::BAD_REQUEST, "bad_request", format!("unknown state {other:?}"));
        }
    };
    let list: Vec<RecordSummary> = records.iter().map(RecordSummary::from).collect();
    Json(list).into_response()
}

async fn sync(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    if let Err(resp) = optional_object::<serde_json::Map<String, serde_json::Value>>(&body) {
        return resp;
    }
    let Some(endpoint) = state.opts.sync_endpoint.clone() else {
        return error(StatusCode::CONFLICT, "no_endpoint", "sync.endpoint is not configured");
    };
    let Ok(_running) = state.sync_lock.try_lock() else {
        return error(StatusCode::CONFLICT, "sync_running", "a sync is already in progress");
    };
    let store = state.store.clone();
    let token = state.opts.sync_token.clone();
    let timeout = state.opts.sync_timeout;
    let run = tokio::task::spawn_blocking(move || {
        let transport = HttpTransport::new(&endpoint, token, timeout);
        sync_once(&store, &transport, &SyncOptions::default())
    })
    .await;
    match run {
        Ok(Ok(report)) => {
            state.session.lock().unwrap().last_sync = Some(report);
            Json(report).into_response()
        }
        Ok(Err(SyncError::EndpointUnreachable(msg))) => error(StatusCode::SERVICE_UNAVAILABLE, "endpoint_unreachable", msg),
        Ok(Err(e)) => internal(e),
        Err(e) => internal(e),
    }
}

#[derive(Serialize)]
struct SessionReply {
    preview_ref: Option<String>,
    camera: CameraStatus,
    last_result: Option<ScreeningResult>,
    last_slide_ref: Option<String>,
    unsaved: bool,
    last_record: Option<String>,
    sync: StateCounts,
    last_sync: Option<SyncReport>,
    sync_endpoint_configured: bool,
}

#[derive(Serialize)]
struct CameraStatus {
    kind: CameraKind,
    remaining: Option<usize>,
}

async fn session(State(state): State<Arc<AppState>>) -> Response {
    let camera = {
        let cam = state.camera.lock().unwrap();
        CameraStatus { kind: cam.kind(), remaining: cam.remaining() }
    };
    let s = state.session.lock().unwrap();
    Json(SessionReply {
        preview_ref: s.preview_ref.clone(),
        camera,
        last_result: s.last.as_ref().map(|c| c.output.result.clone()),
        last_slide_ref: s.last.as_ref().map(|c| c.slide_ref.clone()),
        unsaved: s.unsaved,
        last_record: s.last_record.clone(),
        sync: state.store.counts(),
        last_sync: s.last_sync,
        sync_endpoint_configured: state.opts.sync_endpoint.is_some(),
    })
    .into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    let static_dir = state.opts.static_dir.clone();
    let api = Router::new()
        .route("/v1/health", get(health))
        .route("/v1/preview", get(preview))
        .route("/v1/capture", post(capture))
        .route("/v1/frames/{hash}", get(frame))
        .route("/v1/records", post(save_record).get(list_records))
        .route("/v1/sync", post(sync))
        .route("/v1/session", get(session))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    let app = router(state.clone());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    if state.has_unsaved_result() {
        log::warn!("shutting down with an unsaved result; it is discarded");
    }
    Ok(())
}

pub async fn bind(port: u16) -> Result<tokio::net::TcpListener, ServiceError> {
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    tokio::net::TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServiceError::PortInUse(port),
        _ => ServiceError::Io(e),
    })
}
