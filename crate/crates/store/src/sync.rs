use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backoff::BackoffPolicy;
use crate::clock::{format_timestamp, parse_timestamp};
use crate::record::{SlideRecord, SyncState};
use crate::store::{Store, StoreError};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("network error: {0}")]
pub struct TransportError(pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct WireResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

/// Client side of the sync wire protocol.
pub trait Transport: Send + Sync {
    fn health(&self) -> Result<WireResponse, TransportError>;
    fn put_blob(&self, sha256: &str, bytes: &[u8]) -> Result<WireResponse, TransportError>;
    fn put_record(&self, record_id: &str, document: &[u8]) -> Result<WireResponse, TransportError>;
}

/// Body of a 409 reply to `PUT /v1/records/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictReply {
    pub record_id: String,
    pub stored_hash: String,
    pub submitted_hash: String,
    pub hash_match: bool,
}

pub struct HttpTransport {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: &str, token: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTransport { endpoint: endpoint.trim_end_matches('/').to_string(), token, agent }
    }

    /// Token taken from the `MAISCOPE_SYNC_TOKEN` environment variable.
    pub fn from_env(endpoint: &str) -> Self {
        let token = std::env::var(crate::SYNC_TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Self::new(endpoint, token, Duration::from_secs(10))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn finish(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<WireResponse, TransportError> {
        let mut resp = resp.map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(64 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(WireResponse { status, body })
    }

    fn put(&self, path: &str, bytes: &[u8], content_type: &str) -> Result<WireResponse, TransportError> {
        let mut req = self.agent.put(format!("{}{path}", self.endpoint)).header("Content-Type", content_type);
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        Self::finish(req.send(bytes))
    }
}

impl Transport for HttpTransport {
    fn health(&self) -> Result<WireResponse, TransportError> {
        Self::finish(self.agent.get(format!("{}/v1/health", self.endpoint)).call())
    }

    fn put_blob(&self, sha256: &str, bytes: &[u8]) -> Result<WireResponse, TransportError> {
        self.put(&format!("/v1/blobs/{sha256}"), bytes, "application/octet-stream")
    }

    fn put_record(&self, record_id: &str, document: &[u8]) -> Result<WireResponse, TransportError> {
        self.put(&format!("/v1/records/{record_id}"), document, "application/json")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncOptions {
    pub batch_size: usize,
    pub parallelism: usize,
    /// Tries per HTTP request within one round before the record fails.
    pub request_attempts: u32,
    pub backoff: BackoffPolicy,
}

impl Default for SyncOptions {
    fn default() -> Self {
        SyncOptions { batch_size: 16, parallelism: 2, request_attempts: 3, backoff: BackoffPolicy::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncReport {
    pub uploaded: usize,
    pub failed: usize,
    /// Records not attempted: already synced, waiting out backoff, or held for review.
    pub skipped: usize,
    /// Subset of `failed` whose server copy differs; these need manual review.
    pub conflicts: usize,
}

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("sync endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

enum Outcome {
    Uploaded,
    Failed(String),
    Conflict(String),
}

fn is_retryable(r: &Result<WireResponse, TransportError>) -> bool {
    match r {
        Err(_) => true,
        Ok(resp) => resp.status >= 500,
    }
}

fn with_retries(
    attempts: u32,
    mut f: impl FnMut() -> Result<WireResponse, TransportError>,
) -> Result<WireResponse, TransportError> {
    let mut last = f();
    for _ in 1..attempts.max(1) {
        if !is_retryable(&last) {
            break;
        }
        last = f();
    }
    last
}

fn describe(r: &Result<WireResponse, TransportError>) -> String {
    match r {
        Err(e) => e.to_string(),
        Ok(resp) => format!("HTTP {}: {}", resp.status, String::from_utf8_lossy(&resp.body).trim()),
    }
}

fn upload(store: &Store, transport: &dyn Transport, record: &SlideRecord, opts: &SyncOptions) -> Result<Outcome, StoreError> {
    for hash in record.doc.blob_refs() {
        let bytes = store.blob(hash)?;
        let r = with_retries(opts.request_attempts, || transport.put_blob(hash, &bytes));
        match &r {
            Ok(resp) if resp.status == 200 || resp.status == 201 => {}
            _ => return Ok(Outcome::Failed(format!("blob {hash}: {}", describe(&r)))),
        }
    }
    let body = record.document_bytes();
    let r = with_retries(opts.request_attempts, || transport.put_record(record.record_id(), &body));
    Ok(match &r {
        Ok(resp) if resp.status == 200 || resp.status == 201 => Outcome::Uploaded,
        Ok(resp) if resp.status == 409 => match serde_json::from_slice::<ConflictReply>(&resp.body) {
            Ok(c) if c.hash_match => Outcome::Uploaded,
            Ok(c) => Outcome::Conflict(format!(
                "server holds different content for {} (stored {}, local {})",
                c.record_id, c.stored_hash, c.submitted_hash
            )),
            Err(e) => Outcome::Failed(format!("unreadable conflict reply: {e}")),
        },
        _ => Outcome::Failed(describe(&r)),
    })
}

fn is_due(record: &SlideRecord, now: chrono::DateTime<chrono::Utc>) -> bool {
    match &record.sync_state {
        SyncState::Pending => true,
        SyncState::Failed { needs_review: true, .. } => false,
        SyncState::Failed { retry_at, .. } => retry_at
            .as_deref()
            .and_then(parse_timestamp)
            .is_none_or(|t| t <= now),
        _ => false,
    }
}

/// Upload every due record once. Records saved while this runs are left
/// for the next call.
pub fn sync_once(store: &Store, transport: &dyn Transport, opts: &SyncOptions) -> Result<SyncReport, SyncError> {
    let all = store.records();
    let now = store.clock().now();
    let due: Vec<SlideRecord> = all.iter().filter(|r| is_due(r, now)).cloned().collect();
    let mut report = SyncReport { skipped: all.len() - due.len(), ..Default::default() };
    if due.is_empty() {
        return Ok(report);
    }
    let probe = with_retries(opts.request_attempts, || transport.health());
    if !matches!(&probe, Ok(r) if r.status == 200) {
        return Err(SyncError::EndpointUnreachable(describe(&probe)));
    }

    let report_cell = Mutex::new(report);
    let first_error: Mutex<Option<StoreError>> = Mutex::new(None);
    for batch in due.chunks(opts.batch_size.max(1)) {
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..opts.parallelism.clamp(1, batch.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(record) = batch.get(i) else { break };
                    if let Err(e) = sync_record(store, transport, record, opts, &report_cell) {
                        first_error.lock().unwrap().get_or_insert(e);
                    }
                });
            }
        });
        if let Some(e) = first_error.lock().unwrap().take() {
            return Err(e.into());
        }
    }
    report = report_cell.into_inner().unwrap();
    Ok(report)
}

fn sync_record(
    store: &Store,
    transport: &dyn Transport,
    record: &SlideRecord,
    opts: &SyncOptions,
    report: &Mutex<SyncReport>,
) -> Result<(), StoreError> {
    let id = record.record_id();
    let prior_attempts = record.sync_state.attempts();
    store.transition(id, SyncState::Uploading)?;
    let outcome = match upload(store, transport, record, opts) {
        Ok(o) => o,
        Err(e) => Outcome::Failed(e.to_string()),
    };
    let attempts = prior_attempts + 1;
    let next = match &outcome {
        Outcome::Uploaded => SyncState::Synced,
        Outcome::Failed(msg) => SyncState::Failed {
            attempts,
            last_error: msg.clone(),
            retry_at: Some(format_timestamp(
                store.clock().now() + chrono::Duration::from_std(opts.backoff.delay(attempts, id)).expect("bounded delay"),
            )),
            needs_review: false,
        },
        Outcome::Conflict(msg) => SyncState::Failed { attempts, last_error: msg.clone(), retry_at: None, needs_review: true },
    };
    store.transition(id, next)?;
    let mut r = report.lock().unwrap();
    match outcome {
        Outcome::Uploaded => r.uploaded += 1,
        Outcome::Failed(_) => r.failed += 1,
        Outcome::Conflict(_) => {
            r.failed += 1;
            r.conflicts += 1;
        }
    }
    Ok(())
}
