mod common;

use std::sync::Mutex;
use std::time::Duration;

use common::fault_harness::run_fault_injection;
use common::{clock, open_store, result, slide};
use smearscan_store::blob::snapshot_dir;
use smearscan_store::server::{spawn_reference_server, ServerConfig};
use smearscan_store::sync::{TransportError, WireResponse};
use smearscan_store::{sync_once, Clock, HttpTransport, SyncError, SyncOptions, SyncReport, SyncState, Transport};

fn transport(url: &str) -> HttpTransport {
    HttpTransport::new(url, None, Duration::from_secs(5))
}

#[test]
fn happy_path_then_replay_is_a_no_op() {
    let (local, remote) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let store = open_store(local.path(), clock());
    store.save_record(&slide(1), &[slide(2)], &result(1, 9)).unwrap();
    store.save_record(&slide(3), &[], &result(0, 4)).unwrap();
    let server = spawn_reference_server(remote.path(), ServerConfig::default()).unwrap();
    let t = transport(&server.url());

    let first = sync_once(&store, &t, &SyncOptions::default()).unwrap();
    assert_eq!(first, SyncReport { uploaded: 2, failed: 0, skipped: 0, conflicts: 0 });
    assert!(store.records().iter().all(|r| r.sync_state == SyncState::Synced));
    let before = snapshot_dir(remote.path()).unwrap();
    assert_eq!(before.keys().filter(|k| k.starts_with("records/")).count(), 2);

    let replay = sync_once(&store, &t, &SyncOptions::default()).unwrap();
    assert_eq!(replay, SyncReport { uploaded: 0, failed: 0, skipped: 2, conflicts: 0 });
    assert_eq!(snapshot_dir(remote.path()).unwrap(), before);

    for r in store.records() {
        let body = ureq::get(format!("{}/v1/records/{}", server.url(), r.record_id()))
            .call()
            .unwrap()
            .body_mut()
            .read_to_vec()
            .unwrap();
        assert_eq!(body, r.document_bytes());
    }
}

/// Wraps a transport and fails the record PUT for one chosen id.
struct FailOne<'a> {
    inner: &'a dyn Transport,
    victim: Mutex<Option<String>>,
}

impl Transport for FailOne<'_> {
    fn health(&self) -> Result<WireResponse, TransportError> {
        self.inner.health()
    }
    fn put_blob(&self, sha: &str, bytes: &[u8]) -> Result<WireResponse, TransportError> {
        self.inner.put_blob(sha, bytes)
    }
    fn put_record(&self, id: &str, doc: &[u8]) -> Result<WireResponse, TransportError> {
        if self.victim.lock().unwrap().as_deref() == Some(id) {
            return Ok(WireResponse { status: 500, body: b"boom".to_vec() });
        }
        self.inner.put_record(id, doc)
    }
}

#[test]
fn one_server_error_fails_only_that_record() {
    let (local, remote) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let clk = clock();
    let store = open_store(local.path(), clk.clone());
    let a = store.save_record(&slide(1), &[], &result(0, 1)).unwrap();
    let b = store.save_record(&slide(2), &[], &result(0, 1)).unwrap();
    let server = spawn_reference_server(remote.path(), ServerConfig::default()).unwrap();
    let inner = transport(&server.url());
    let t = FailOne { inner: &inner, victim: Mutex::new(Some(a.doc.record_id.clone())) };

    let report = sync_once(&store, &t, &SyncOptions::default()).unwrap();
    assert_eq!((report.uploaded, report.failed), (1, 1));
    assert!(matches!(store.get(a.record_id()).unwrap().sync_state, SyncState::Failed { attempts: 1, .. }));
    assert_eq!(store.get(b.record_id()).unwrap().sync_state, SyncState::Synced);

    // Not yet due: backoff keeps it out of an immediate retry.
    *t.victim.lock().unwrap() = None;
    assert_eq!(sync_once(&store, &t, &SyncOptions::default()).unwrap().skipped, 2);
    clk.advance(Duration::from_secs(3));
    let retry = sync_once(&store, &t, &SyncOptions::default()).unwrap();
    assert_eq!(retry.uploaded, 1);
    assert_eq!(store.get(a.record_id()).unwrap().sync_state, SyncState::Synced);
}

#[test]
fn retry_schedule_is_recorded() {
    let local = tempfile::tempdir().unwrap();
    let clk = clock();
    let store = open_store(local.path(), clk.clone());
    let id = store.save_record(&slide(1), &[], &result(0, 1)).unwrap().doc.record_id;
    struct Down;
    impl Transport for Down {
        fn health(&self) -> Result<WireResponse, TransportError> {
            Ok(WireResponse { status: 200, body: Vec::new() })
        }
        fn put_blob(&self, _: &str, _: &[u8]) -> Result<WireResponse, TransportError> {
            Ok(WireResponse { status: 503, body: Vec::new() })
        }
        fn put_record(&self, _: &str, _: &[u8]) -> Result<WireResponse, TransportError> {
            unreachable!()
        }
    }
    let mut delays = Vec::new();
    for _ in 0..4 {
        let before = clk.now();
        sync_once(&store, &Down, &SyncOptions::default()).unwrap();
        let SyncState::Failed { retry_at, .. } = store.get(&id).unwrap().sync_state else { panic!() };
        let at = smearscan_store::clock::parse_timestamp(&retry_at.unwrap()).unwrap();
        delays.push((at - before).num_milliseconds() as f64 / 1000.0);
        clk.advance(Duration::from_secs(400));
    }
    for (i, d) in delays.iter().enumerate() {
        let nominal = 2.0 * 2f64.powi(i as i32);
        assert!(*d >= nominal * 0.8 - 0.01 && *d <= nominal * 1.2 + 0.01, "{delays:?}");
    }
    assert!(matches!(store.get(&id).unwrap().sync_state, SyncState::Failed { attempts: 4, .. }));
}

#[test]
fn unreachable_endpoint_changes_nothing() {
    let local = tempfile::tempdir().unwrap();
    let store = open_store(local.path(), clock());
    store.save_record(&slide(1), &[], &result(0, 1)).unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let t = HttpTransport::new(&format!("http://127.0.0.1:{port}"), None, Duration::from_millis(500));
    let before = store.records();
    assert!(matches!(sync_once(&store, &t, &SyncOptions::default()), Err(SyncError::EndpointUnreachable(_))));
    assert_eq!(store.records(), before);
}

#[test]
fn conflicting_content_is_flagged_for_review() {
    let (local, remote) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let store = open_store(local.path(), clock());
    let rec = store.save_record(&slide(1), &[], &result(0, 1)).unwrap();
    let server = spawn_reference_server(remote.path(), ServerConfig::default()).unwrap();
    let t = transport(&server.url());
    // Another writer got there first with different content under the same id.
    let mut other = rec.doc.clone();
    other.result = result(1, 0);
    t.put_blob(&rec.doc.slide_blob, &store.blob(&rec.doc.slide_blob).unwrap()).unwrap();
    assert_eq!(t.put_record(rec.record_id(), &other.to_bytes()).unwrap().status, 201);
    let before = snapshot_dir(remote.path()).unwrap();

    let report = sync_once(&store, &t, &SyncOptions::default()).unwrap();
    assert_eq!((report.failed, report.conflicts), (1, 1));
    let state = store.get(rec.record_id()).unwrap().sync_state;
    assert!(state.needs_review());
    assert_eq!(snapshot_dir(remote.path()).unwrap(), before);
    assert_eq!(sync_once(&store, &t, &SyncOptions::default()).unwrap().skipped, 1);
}

#[test]
fn identical_resubmission_is_idempotent() {
    let (local, remote) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let store = open_store(local.path(), clock());
    let rec = store.save_record(&slide(1), &[], &result(0, 1)).unwrap();
    let server = spawn_reference_server(remote.path(), ServerConfig::default()).unwrap();
    let t = transport(&server.url());
    t.put_blob(&rec.doc.slide_blob, &store.blob(&rec.doc.slide_blob).unwrap()).unwrap();
    assert_eq!(t.put_record(rec.record_id(), &rec.document_bytes()).unwrap().status, 201);
    let again = t.put_record(rec.record_id(), &rec.document_bytes()).unwrap();
    assert_eq!(again.status, 409);
    let reply: serde_json::Value = serde_json::from_slice(&again.body).unwrap();
    assert_eq!(reply["hash_match"], true);
    assert_eq!(reply["stored_hash"], rec.document_hash());
    assert_eq!(sync_once(&store, &t, &SyncOptions::default()).unwrap().uploaded, 1);
}

#[test]
fn server_rejects_bad_requests() {
    let remote = tempfile::tempdir().unwrap();
    let server = spawn_reference_server(remote.path(), ServerConfig { token: Some("s3cret".into()), ..Default::default() }).unwrap();
    let sha = smearscan_core::hash::content_hash(b"abc");
    let wrong = HttpTransport::new(&server.url(), Some("nope".into()), Duration::from_secs(5));
    assert_eq!(wrong.put_blob(&sha, b"abc").unwrap().status, 401);
    let right = HttpTransport::new(&server.url(), Some("s3cret".into()), Duration::from_secs(5));
    assert_eq!(right.put_blob(&sha, b"abd").unwrap().status, 400);
    assert_eq!(right.put_blob(&sha, b"abc").unwrap().status, 201);
    assert_eq!(right.put_blob(&sha, b"abc").unwrap().status, 200);
    assert_eq!(right.put_record("r1", b"{not json").unwrap().status, 400);
    let missing = format!(r#"{{"record_id":"r1","slide_blob":"{}"}}"#, "0".repeat(64));
    assert_eq!(right.put_record("r1", missing.as_bytes()).unwrap().status, 422);
    let ok = format!(r#"{{"record_id":"r1","slide_blob":"{sha}"}}"#);
    assert_eq!(right.put_record("r2", ok.as_bytes()).unwrap().status, 400);
    assert_eq!(right.put_record("r1", ok.as_bytes()).unwrap().status, 201);
}

#[test]
fn lossy_server_converges_to_one_copy_per_record() {
    let run = run_fault_injection(60, 0.3, 10, 99);
    assert!(run.rounds_used.is_some(), "{run:?}");
    assert_eq!(run.server_records, run.records);
    assert!(run.documents_identical && run.blobs_match, "{run:?}");
}
