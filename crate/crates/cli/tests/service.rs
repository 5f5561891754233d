use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;
use smearscan_cli::backends::Backends;
use smearscan_cli::camera::CameraSource;
use smearscan_cli::commands::generate_slides;
use smearscan_cli::config::{BackendChoice, CameraKind};
use smearscan_cli::service::{router, AppState, ServiceOptions};
use smearscan_core::datasets::SyntheticSlideSpec;
use smearscan_core::hash::content_hash;
use smearscan_core::imaging::{decode_image, ImageFormat};
use smearscan_core::pipeline::PipelineConfig;
use smearscan_store::blob::snapshot_dir;
use smearscan_store::server::{spawn_reference_server, ServerConfig};
use smearscan_store::Store;

struct Service {
    url: String,
    _rt: tokio::runtime::Runtime,
    _dirs: Vec<tempfile::TempDir>,
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

fn spawn(frames: usize, endpoint: Option<String>) -> Service {
    let data = tempfile::tempdir().unwrap();
    let store_dir = tempfile::tempdir().unwrap();
    let template = SyntheticSlideSpec { n_rbc: 12, parasitized_fraction: 0.25, ..Default::default() };
    generate_slides(data.path(), 5, frames, &template, false).unwrap();
    let camera = CameraSource::open(CameraKind::Directory, data.path()).unwrap();
    let opts = ServiceOptions {
        pipeline: PipelineConfig::default(),
        backends: Backends {
            detector: BackendChoice::Oracle,
            classifier: BackendChoice::Oracle,
            fixtures: Some(data.path().to_path_buf()),
            detector_command: vec![],
            classifier_command: vec![],
        },
        sync_endpoint: endpoint,
        sync_token: None,
        sync_timeout: Duration::from_secs(5),
        static_dir: None,
    };
    let store = Arc::new(Store::open(store_dir.path()).unwrap());
    let state = Arc::new(AppState::new(opts, store, camera));
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    rt.spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
    Service { url, _rt: rt, _dirs: vec![data, store_dir] }
}

fn call(method: &str, url: &str, body: Option<&[u8]>) -> (u16, Vec<u8>) {
    let a = agent();
    let mut resp = match (method, body) {
        ("GET", _) => a.get(url).call(),
        ("POST", Some(b)) => a.post(url).header("Content-Type", "application/json").send(b),
        ("POST", None) => a.post(url).send_empty(),
        _ => unreachable!(),
    }
    .unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_to_vec().unwrap())
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap()
}

#[test]
fn health_reports_ok() {
    let s = spawn(1, None);
    let (status, body) = call("GET", &format!("{}/v1/health", s.url), None);
    assert_eq!(status, 200);
    assert_eq!(json(&body)["status"], "ok");
}

#[test]
fn capture_review_save_flow() {
    let s = spawn(2, None);
    let (status, preview) = call("GET", &format!("{}/v1/preview", s.url), None);
    assert_eq!(status, 200);
    assert_eq!(decode_image(&preview, ImageFormat::Png).unwrap().width(), 320);

    let (status, _) = call("POST", &format!("{}/v1/records", s.url), None);
    assert_eq!(status, 409, "nothing to save before a capture");

    let (status, body) = call("POST", &format!("{}/v1/capture", s.url), None);
    assert_eq!(status, 200);
    let result = json(&body);
    assert_eq!(result["infected_count"], 3);
    assert_eq!(result["uninfected_count"], 9);
    assert_eq!(result["parasitemia_pct"], 25.0);
    assert_eq!(result["frame"], "slide_0000.ppm");
    let overlay_ref = result["overlay_ref"].as_str().unwrap().to_string();
    let (status, overlay) = call("GET", &format!("{}/v1/frames/{overlay_ref}", s.url), None);
    assert_eq!(status, 200);
    assert_eq!(content_hash(&overlay), overlay_ref);

    let session = json(&call("GET", &format!("{}/v1/session", s.url), None).1);
    assert_eq!(session["unsaved"], true);
    assert_eq!(session["last_result"]["infected_count"], 3);

    let stale = br#"{"overlay_ref":"0000000000000000000000000000000000000000000000000000000000000000"}"#;
    assert_eq!(call("POST", &format!("{}/v1/records", s.url), Some(stale)).0, 409);
    let body = format!(r#"{{"overlay_ref":"{overlay_ref}"}}"#);
    let (status, saved) = call("POST", &format!("{}/v1/records", s.url), Some(body.as_bytes()));
    assert_eq!(status, 201);
    assert_eq!(json(&saved)["sync_state"]["state"], "pending");
    assert_eq!(call("POST", &format!("{}/v1/records", s.url), None).0, 409, "saved results cannot be saved twice");

    let session = json(&call("GET", &format!("{}/v1/session", s.url), None).1);
    assert_eq!(session["unsaved"], false);
    assert_eq!(session["sync"]["pending"], 1);
    let pending = json(&call("GET", &format!("{}/v1/records?state=pending", s.url), None).1);
    assert_eq!(pending.as_array().unwrap().len(), 1);
    assert_eq!(json(&call("GET", &format!("{}/v1/records?state=synced", s.url), None).1).as_array().unwrap().len(), 0);
    assert_eq!(call("GET", &format!("{}/v1/records?state=bogus", s.url), None).0, 400);
}

#[test]
fn http_capture_matches_cli_screen() {
    let s = spawn(1, None);
    let (data, http_store) = (s._dirs[0].path(), s._dirs[1].path());
    let (status, body) = call("POST", &format!("{}/v1/capture", s.url), None);
    assert_eq!(status, 200);
    let mut captured = json(&body);
    assert_eq!(call("POST", &format!("{}/v1/records", s.url), None).0, 201);

    let (out, cli_store) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let frame = data.join("slide_0000.ppm");
    let argv = [
        "smearscan", "screen", "--input", frame.to_str().unwrap(), "--detector", "oracle", "--classifier", "oracle",
        "--fixtures", data.to_str().unwrap(), "--out", out.path().to_str().unwrap(),
        "--save", "--store", cli_store.path().to_str().unwrap(),
    ];
    let (mut so, mut se) = (Vec::new(), Vec::new());
    assert_eq!(smearscan_cli::commands::run(argv, &mut so, &mut se), 0, "{}", String::from_utf8_lossy(&se));

    let from_cli: serde_json::Value = serde_json::from_slice(&std::fs::read(out.path().join("result.json")).unwrap()).unwrap();
    for extra in ["slide_ref", "frame", "parasitemia_display"] {
        captured.as_object_mut().unwrap().remove(extra);
    }
    assert_eq!(captured, from_cli);
    let http_blobs = snapshot_dir(&http_store.join("blobs")).unwrap();
    assert!(!http_blobs.is_empty());
    assert_eq!(http_blobs, snapshot_dir(&cli_store.path().join("blobs")).unwrap());
}

#[test]
fn exhausted_camera_is_a_conflict() {
    let s = spawn(1, None);
    assert_eq!(call("POST", &format!("{}/v1/capture", s.url), None).0, 200);
    let (status, body) = call("POST", &format!("{}/v1/capture", s.url), None);
    assert_eq!(status, 409);
    assert_eq!(json(&body)["error"], "end_of_frames");
    assert_eq!(call("GET", &format!("{}/v1/preview", s.url), None).0, 409);
}

#[test]
fn sync_endpoint_states() {
    let none = spawn(1, None);
    assert_eq!(call("POST", &format!("{}/v1/sync", none.url), None).0, 409);

    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let down = spawn(1, Some(format!("http://127.0.0.1:{port}")));
    call("POST", &format!("{}/v1/capture", down.url), None);
    call("POST", &format!("{}/v1/records", down.url), None);
    assert_eq!(call("POST", &format!("{}/v1/sync", down.url), None).0, 503);
    let session = json(&call("GET", &format!("{}/v1/session", down.url), None).1);
    assert_eq!(session["sync"]["pending"], 1, "failed probe must not touch records");

    let remote = tempfile::tempdir().unwrap();
    let server = spawn_reference_server(remote.path(), ServerConfig::default()).unwrap();
    let up = spawn(1, Some(server.url()));
    call("POST", &format!("{}/v1/capture", up.url), None);
    call("POST", &format!("{}/v1/records", up.url), None);
    let (status, report) = call("POST", &format!("{}/v1/sync", up.url), None);
    assert_eq!(status, 200);
    assert_eq!(json(&report)["uploaded"], 1);
    let session = json(&call("GET", &format!("{}/v1/session", up.url), None).1);
    assert_eq!(session["sync"]["synced"], 1);
    assert_eq!(session["last_sync"]["uploaded"], 1);
    assert!(Path::new(remote.path()).join("records").read_dir().unwrap().count() == 1);
}

#[test]
fn malformed_json_is_rejected() {
    let s = spawn(1, None);
    for path in ["/v1/records", "/v1/sync"] {
        let (status, body) = call("POST", &format!("{}{path}", s.url), Some(b"{\"overlay_ref\": "));
        assert_eq!(status, 400, "{path}");
        assert_eq!(json(&body)["error"], "bad_request");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn arbitrary_bodies_never_crash(body in proptest::collection::vec(any::<u8>(), 0..64)) {
        thread_local! {
            static SERVICE: Service = spawn(1, None);
        }
        SERVICE.with(|s| {
            for path in ["/v1/records", "/v1/sync"] {
                let (status, _) = call("POST", &format!("{}{path}", s.url), Some(&body));
                prop_assert!(status < 500, "{} -> {}", path, status);
            }
            let (status, _) = call("GET", &format!("{}/v1/health", s.url), None);
            prop_assert_eq!(status, 200);
            Ok(())
        })?;
    }
}
