//! Reference sync server: content-addressed blobs plus one immutable
//! document per record id, with optional bearer auth and fault injection.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use smearscan_core::hash::{content_hash, is_content_hash};
use smearscan_core::prng::Prng;

use crate::sync::ConflictReply;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultKind {
    /// Commit the write, then cut the connection mid-response.
    Drop,
    /// Reply 500 without committing.
    Error,
    /// Commit the write, then stall past the client's timeout.
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultConfig {
    /// Probability that a PUT request is hit by a fault.
    pub rate: f64,
    pub seed: u64,
    pub kinds: Vec<FaultKind>,
    pub stall: Duration,
}

impl Default for FaultConfig {
    fn default() -> Self {
        FaultConfig {
            rate: 0.0,
            seed: 0,
            kinds: vec![FaultKind::Drop, FaultKind::Error, FaultKind::Timeout],
            stall: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServerConfig {
    pub token: Option<String>,
    pub faults: FaultConfig,
}

pub struct ServerState {
    dir: PathBuf,
    config: ServerConfig,
    rng: Mutex<Prng>,
    record_lock: tokio::sync::Mutex<()>,
}

impl ServerState {
    pub fn new(dir: impl Into<PathBuf>, config: ServerConfig) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(dir.join("blobs"))?;
        std::fs::create_dir_all(dir.join("records"))?;
        Ok(ServerState {
            rng: Mutex::new(Prng::new(config.faults.seed)),
            dir,
            config,
            record_lock: tokio::sync::Mutex::new(()),
        })
    }

    fn blob_path(&self, sha: &str) -> PathBuf {
        self.dir.join("blobs").join(&sha[..2]).join(sha)
    }

    fn record_path(&self, id: &str) -> PathBuf {
        self.dir.join("records").join(format!("{id}.json"))
    }

    fn draw_fault(&self) -> Option<FaultKind> {
        let f = &self.config.faults;
        if f.rate <= 0.0 || f.kinds.is_empty() {
            return None;
        }
        let mut rng = self.rng.lock().unwrap();
        if rng.next_f64() >= f.rate {
            return None;
        }
        Some(f.kinds[rng.below(f.kinds.len() as u64) as usize])
    }

    fn authorized(&self, headers: &HeaderMap) -> bool {
        let Some(token) = &self.config.token else { return true };
        headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token)
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

/// Deliver `resp` according to the drawn fault, after the write committed.
async fn deliver(state: &ServerState, fault: Option<FaultKind>, resp: Response) -> Response {
    match fault {
        Some(FaultKind::Drop) => {
            let stream = futures_util::stream::once(async {
                Err::<Bytes, std::io::Error>(std::io::Error::other("injected connection drop"))
            });
            Response::builder()
                .status(resp.status())
                .body(Body::from_stream(stream))
                .expect("static response parts")
        }
        Some(FaultKind::Timeout) => {
            tokio::time::sleep(state.config.faults.stall).await;
            resp
        }
        _ => resp,
    }
}

async fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let path = path.to_path_buf();
    let bytes = bytes.to_vec();
    tokio::task::spawn_blocking(move || {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        crate::blob::write_atomic(&path, &bytes)
    })
    .await
    .map_err(std::io::Error::other)?
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn put_blob(
    State(state): State<Arc<ServerState>>,
    UrlPath(sha): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    if !state.authorized(&headers) {
        return error(StatusCode::UNAUTHORIZED, "missing or wrong bearer token");
    }
    if !is_content_hash(&sha) {
        return error(StatusCode::BAD_REQUEST, "blob key must be a lowercase sha256 hex digest");
    }
    let fault = state.draw_fault();
    if fault == Some(FaultKind::Error) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, "injected failure");
    }
    if content_hash(&body) != sha {
        return error(StatusCode::BAD_REQUEST, "body does not hash to the blob key");
    }
    let path = state.blob_path(&sha);
    let status = if path.is_file() {
        StatusCode::OK
    } else {
        if let Err(e) = write_atomic(&path, &body).await {
            return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
        }
        StatusCode::CREATED
    };
    deliver(&state, fault, (status, Json(serde_json::json!({ "sha256": sha }))).into_response()).await
}

#[derive(Deserialize)]
struct RecordRefs {
    record_id: String,
    slide_blob: String,
    #[serde(default)]
    crop_blobs: Vec<String>,
    #[serde(default)]
    overlay_blob: Option<String>,
}

fn valid_record_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

async fn put_record(
    State(state): State<Arc<ServerState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    if !state.authorized(&headers) {
        return error(StatusCode::UNAUTHORIZED, "missing or wrong bearer token");
    }
    if !valid_record_id(&id) {
        return error(StatusCode::BAD_REQUEST, "invalid record id");
    }
    let fault = state.draw_fault();
    if fault == Some(FaultKind::Error) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, "injected failure");
    }
    let refs: RecordRefs = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed record: {e}")),
    };
    if refs.record_id != id {
        return error(StatusCode::BAD_REQUEST, "record_id does not match the URL");
    }
    let all_refs = std::iter::once(&refs.slide_blob).chain(&refs.crop_blobs).chain(refs.overlay_blob.as_ref());
    for h in all_refs {
        if !is_content_hash(h) || !state.blob_path(h).is_file() {
            return error(StatusCode::UNPROCESSABLE_ENTITY, format!("blob {h} has not been uploaded"));
        }
    }
    let submitted = content_hash(&body);
    let _guard = state.record_lock.lock().await;
    let path = state.record_path(&id);
    let resp = match tokio::fs::read(&path).await {
        Ok(existing) => {
            let stored = content_hash(&existing);
            let reply = ConflictReply { record_id: id, hash_match: stored == submitted, stored_hash: stored, submitted_hash: submitted };
            (StatusCode::CONFLICT, Json(reply)).into_response()
        }
        Err(_) => {
            if let Err(e) = write_atomic(&path, &body).await {
                return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
            }
            (StatusCode::CREATED, Json(serde_json::json!({ "record_id": id, "stored_hash": submitted }))).into_response()
        }
    };
    drop(_guard);
    deliver(&state, fault, resp).await
}

async fn get_record(State(state): State<Arc<ServerState>>, UrlPath(id): UrlPath<String>, headers: HeaderMap) -> Response {
    if !state.authorized(&headers) {
        return error(StatusCode::UNAUTHORIZED, "missing or wrong bearer token");
    }
    if !valid_record_id(&id) {
        return error(StatusCode::BAD_REQUEST, "invalid record id");
    }
    match tokio::fs::read(state.record_path(&id)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, "no such record"),
    }
}

pub fn router(state: Arc<ServerState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/blobs/{sha}", put(put_blob))
        .route("/v1/records/{id}", put(put_record).get(get_record))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: Arc<ServerState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// A reference server on its own thread and runtime, stopped on drop.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown_now();
    }
}

/// Start a reference server on `127.0.0.1` with an ephemeral port.
pub fn spawn_reference_server(dir: impl Into<PathBuf>, config: ServerConfig) -> std::io::Result<ServerHandle> {
    let state = Arc::new(ServerState::new(dir, config)?);
    let std_listener = std::net::TcpListener::bind("127.0.0.1:0")?;
    std_listener.set_nonblocking(true)?;
    let addr = std_listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener registers with runtime");
            let _ = axum::serve(listener, router(state))
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        rt.shutdown_timeout(Duration::from_millis(100));
    });
    Ok(ServerHandle { addr, shutdown: Some(tx), thread: Some(thread) })
}
