use std::collections::BTreeMap;

use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use chexfix_core::backend::{BackendError, FixtureBackend, FixtureStore, ToolBackend};
use chexfix_core::mask::Rle;
use chexfix_core::model::{ImageSize, PixelSpacing, StudyRecord};
use chexfix_wire::{EndpointConfig, FixtureServer, HttpBackend};
use serde_json::{json, Value};

fn size(w: u32, h: u32) -> ImageSize {
    ImageSize::new(w, h).unwrap()
}

fn study(id: &str, w: u32, h: u32) -> StudyRecord {
    StudyRecord::new(id, "img.png", size(w, h), PixelSpacing::new(0.1, 0.1).unwrap(), "ETT in place.").unwrap()
}

const FIXTURES: &str = "\
s1\tendotracheal tube\t100,200,100,200\t0.9
s1\tcarina\t90,250,110,270\t1
s1\tnodule\t10,10,30,40\t0.4
s1\tnodule\t50,50,60,60\t0.8
s1\tleft lung\tMASK\t8,4\t3,5,4,20
s2\tcarina\t5,5,5,5\t0.7
";

/// Serves a canned JSON body with the given status on every endpoint.
fn canned(status: u16, body: Value) -> chexfix_wire::RunningServer {
    let status = StatusCode::from_u16(status).unwrap();
    let handler = move || {
        let body = body.clone();
        async move { (status, Json(body)) }
    };
    let router = Router::new()
        .route("/v1/exists", post(handler.clone()))
        .route("/v1/find", post(handler.clone()))
        .route("/v1/segment", post(handler));
    chexfix_wire::server::spawn_router(router, "127.0.0.1:0").unwrap()
}

fn client(url: String) -> HttpBackend {
    HttpBackend::new(EndpointConfig::new("remote", url))
}

#[test]
fn http_matches_in_process_fixture_backend() {
    let store = FixtureStore::parse(FIXTURES, "fixtures").unwrap();
    let studies = vec![study("s1", 400, 400), study("s2", 64, 64)];
    let local = FixtureBackend::new("remote", store.clone());
    let server = FixtureServer::new(local.clone(), studies.clone()).spawn("127.0.0.1:0").unwrap();
    let remote = client(server.url());
    let names = ["endotracheal tube", "Carina", "nodule", "left lung", "heart"];
    for s in &studies {
        for name in names {
            assert_eq!(remote.exists(s, name).unwrap(), local.exists(s, name).unwrap(), "{name}");
            assert_eq!(remote.find(s, name).unwrap(), local.find(s, name).unwrap(), "{name}");
        }
    }
    // masks are compared in the study frame
    let s1 = &studies[0];
    let lung = store.get("s1").unwrap().mask("left lung").unwrap();
    assert_eq!(remote.segment(s1, "left lung").unwrap().mask, lung.resample(s1.original_size));
    assert!(remote.segment(s1, "heart").unwrap().is_empty());
}

#[test]
fn unknown_image_is_rejected() {
    let store = FixtureStore::parse(FIXTURES, "fixtures").unwrap();
    let server = FixtureServer::new(FixtureBackend::new("r", store), vec![study("s1", 400, 400)])
        .spawn("127.0.0.1:0")
        .unwrap();
    let err = client(server.url()).find(&study("nope", 10, 10), "carina").unwrap_err();
    assert!(matches!(err, BackendError::Rejected { ref code, .. } if code == "unknown_image"), "{err:?}");
}

#[test]
fn manifestless_server_omits_frame() {
    let store = FixtureStore::parse(FIXTURES, "fixtures").unwrap();
    let server = FixtureServer::from_store("r", store);
    assert_eq!(server.study_count(), 2);
    let running = server.spawn("127.0.0.1:0").unwrap();
    let body: Value = ureq::post(&format!("{}/v1/find", running.url()))
        .send_json(json!({"image_id": "s2", "object_name": "carina"}))
        .unwrap()
        .body_mut()
        .read_json()
        .unwrap();
    assert_eq!(body, json!({"detections": [{"bbox": [5.0, 5.0, 5.0, 5.0], "confidence": 0.7}]}));
}

#[test]
fn malformed_request_gets_error_body() {
    let server = FixtureServer::from_store("r", FixtureStore::default()).spawn("127.0.0.1:0").unwrap();
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let mut resp = agent
        .post(&format!("{}/v1/exists", server.url()))
        .send_json(json!({"image_id": "s1"}))
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let body: Value = resp.body_mut().read_json().unwrap();
    assert_eq!(body["error"]["code"], "bad_request");
}

#[test]
fn declared_working_frame_is_rescaled() {
    let server = canned(
        200,
        json!({"image_size": [512, 512], "detections": [{"bbox": [100, 200, 110, 220], "confidence": 0.5}]}),
    );
    let found = client(server.url()).find(&study("s", 2048, 2048), "carina").unwrap();
    assert_eq!(found[0].bbox.as_array(), [400.0, 800.0, 440.0, 880.0]);
    assert_eq!(found[0].object_name, "carina");
}

#[test]
fn frameless_boxes_use_configured_tool_size() {
    let server = canned(200, json!({"detections": [{"bbox": [10, 20, 10, 20], "confidence": 1.0}]}));
    let mut s = study("s", 2048, 1024);
    s.model_image_sizes = BTreeMap::from([("remote".to_string(), size(512, 256))]);
    let found = client(server.url()).find(&s, "carina").unwrap();
    assert_eq!(found[0].bbox.as_array(), [40.0, 80.0, 40.0, 80.0]);
    let unscaled = client(server.url()).find(&study("s", 2048, 1024), "carina").unwrap();
    assert_eq!(unscaled[0].bbox.as_array(), [10.0, 20.0, 10.0, 20.0]);
}

#[test]
fn empty_detections() {
    let server = canned(200, json!({"image_size": [512, 512], "detections": []}));
    assert!(client(server.url()).find(&study("s", 2048, 2048), "carina").unwrap().is_empty());
}

#[test]
fn out_of_range_confidence_is_protocol_violation() {
    let server = canned(200, json!({"detections": [{"bbox": [1, 1, 2, 2], "confidence": 1.5}]}));
    let err = client(server.url()).find(&study("s", 64, 64), "carina").unwrap_err();
    assert!(matches!(err, BackendError::ProtocolViolation(_)), "{err:?}");
    let server = canned(200, json!({"exists": true, "confidence": -0.1}));
    let err = client(server.url()).exists(&study("s", 64, 64), "carina").unwrap_err();
    assert!(matches!(err, BackendError::ProtocolViolation(_)), "{err:?}");
}

#[test]
fn malformed_bodies_are_protocol_violations() {
    for body in [json!({"detections": "none"}), json!({"detections": [{"bbox": [5, 5, 1, 1], "confidence": 0.5}]})] {
        let server = canned(200, body);
        let err = client(server.url()).find(&study("s", 64, 64), "carina").unwrap_err();
        assert!(matches!(err, BackendError::ProtocolViolation(_)), "{err:?}");
    }
    let server = canned(200, json!({"image_size": [4, 2], "rle": [1, 2], "starts_with": 0}));
    let err = client(server.url()).segment(&study("s", 4, 2), "lung").unwrap_err();
    assert!(matches!(err, BackendError::ProtocolViolation(_)), "{err:?}");
}

#[test]
fn status_classes_map_to_error_kinds() {
    let server = canned(503, json!({"error": {"code": "busy", "message": "try later"}}));
    let err = client(server.url()).find(&study("s", 64, 64), "carina").unwrap_err();
    assert!(matches!(err, BackendError::Unavailable(_)), "{err:?}");
    let server = canned(422, json!({"error": {"code": "unsupported_object", "message": "no"}}));
    let err = client(server.url()).find(&study("s", 64, 64), "carina").unwrap_err();
    assert!(matches!(err, BackendError::Rejected { ref code, .. } if code == "unsupported_object"), "{err:?}");
}

#[test]
fn unreachable_server_is_unavailable() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut config = EndpointConfig::new("remote", format!("http://127.0.0.1:{port}"));
    config.timeout_ms = 2000;
    let err = HttpBackend::new(config).find(&study("s", 64, 64), "carina").unwrap_err();
    assert!(matches!(err, BackendError::Unavailable(_)), "{err:?}");
}

#[test]
fn segment_is_resampled_to_original_frame() {
    let server = canned(200, json!({"image_size": [2, 2], "rle": [0, 1, 3], "starts_with": 0}));
    let seg = client(server.url()).segment(&study("s", 4, 4), "lung").unwrap();
    assert_eq!(seg.mask.size, size(4, 4));
    assert_eq!(seg.mask.area(), 4);
    assert_eq!(seg.mask, Rle::from_dense(size(2, 2), &[true, false, false, false]).unwrap().resample(size(4, 4)));
}
