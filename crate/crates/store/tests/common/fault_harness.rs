//! Randomized fault-injection run: many records, lossy server, bounded rounds.

#![allow(dead_code)]

use std::time::Duration;

use smearscan_store::blob::snapshot_dir;
use smearscan_store::server::{spawn_reference_server, FaultConfig, ServerConfig};
use smearscan_store::{sync_once, HttpTransport, SyncOptions, SyncState};

use super::{clock, open_store, result, slide};

#[derive(Debug)]
pub struct FaultRun {
    pub records: usize,
    pub rounds_used: Option<usize>,
    pub server_records: usize,
    pub documents_identical: bool,
    pub blobs_match: bool,
}

pub fn run_fault_injection(records: usize, rate: f64, max_rounds: usize, seed: u64) -> FaultRun {
    let local = tempfile::tempdir().unwrap();
    let remote = tempfile::tempdir().unwrap();
    let clk = clock();
    let store = open_store(local.path(), clk.clone());
    for i in 0..records as u32 {
        store.save_record(&slide(i), &[slide(i % 7 + 10_000)], &result((i % 3) as usize, 10)).unwrap();
    }
    let server = spawn_reference_server(
        remote.path(),
        ServerConfig {
            token: Some("t0k3n".into()),
            faults: FaultConfig { rate, seed, stall: Duration::from_millis(400), ..Default::default() },
        },
    )
    .unwrap();
    let transport = HttpTransport::new(&server.url(), Some("t0k3n".into()), Duration::from_millis(150));
    let opts = SyncOptions::default();
    let mut rounds_used = None;
    for round in 1..=max_rounds {
        // Unreachable rounds leave states unchanged; keep going.
        let _ = sync_once(&store, &transport, &opts);
        if store.records().iter().all(|r| r.sync_state == SyncState::Synced) {
            rounds_used = Some(round);
            break;
        }
        clk.advance(Duration::from_secs(600));
    }
    // Let stalled handlers finish before inspecting the server.
    std::thread::sleep(Duration::from_millis(500));
    drop(server);

    let snap = snapshot_dir(remote.path()).unwrap();
    let server_records = snap.keys().filter(|k| k.starts_with("records/")).count();
    let documents_identical = store.records().iter().all(|r| {
        std::fs::read(remote.path().join("records").join(format!("{}.json", r.record_id())))
            .map(|b| b == r.document_bytes())
            .unwrap_or(false)
    });
    let mut local_blobs: Vec<String> = snapshot_dir(store.blobs().root()).unwrap().into_values().collect();
    let mut server_blobs: Vec<String> =
        snap.iter().filter(|(k, _)| k.starts_with("blobs/")).map(|(_, v)| v.clone()).collect();
    local_blobs.sort();
    server_blobs.sort();
    FaultRun {
        records,
        rounds_used,
        server_records,
        documents_identical,
        blobs_match: local_blobs == server_blobs,
    }
}
