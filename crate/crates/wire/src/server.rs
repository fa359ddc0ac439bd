//! Fixture-backed tool server.
//!
//! Answers the three protocol endpoints from a [`FixtureBackend`]. Studies are
//! looked up by `image_id`; an unknown id is a 404 with code `unknown_image`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use chexfix_core::backend::{BackendError, FixtureBackend, FixtureStore, ToolBackend};
use chexfix_core::model::{ImageSize, PixelSpacing, StudyRecord};
use serde::Serialize;
use thiserror::Error;
use tokio::sync::oneshot;

use crate::protocol::{
    Detection, ErrorBody, ExistsResponse, FindResponse, ObjectRequest, SegmentResponse, EXISTS_PATH, FIND_PATH,
    SEGMENT_PATH,
};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server runtime: {0}")]
    Runtime(#[from] std::io::Error),
}

struct Entry {
    study: StudyRecord,
    /// Whether `study.original_size` came from a manifest rather than being
    /// inferred from the annotations.
    authoritative: bool,
}

pub struct FixtureServer {
    backend: FixtureBackend,
    studies: BTreeMap<String, Entry>,
}

impl FixtureServer {
    /// Serves every study in `studies`; annotations for other ids are ignored.
    pub fn new(backend: FixtureBackend, studies: impl IntoIterator<Item = StudyRecord>) -> Self {
        let studies = studies
            .into_iter()
            .map(|study| {
                (
                    study.study_id.clone(),
                    Entry {
                        study,
                        authoritative: true,
                    },
                )
            })
            .collect();
        Self { backend, studies }
    }

    /// Serves every annotated study without a manifest. The frame is taken
    /// from the first mask, or else the smallest size enclosing every box;
    /// find responses then omit `image_size`.
    pub fn from_store(id: impl Into<String>, store: FixtureStore) -> Self {
        let mut studies = BTreeMap::new();
        for (study_id, ann) in &store.studies {
            let size = ann.masks.values().next().map(|m| m.size).unwrap_or_else(|| {
                let (mut w, mut h) = (1.0f64, 1.0f64);
                for b in ann.objects.values().flatten() {
                    w = w.max(b.bbox.right.floor() + 1.0);
                    h = h.max(b.bbox.upper.floor() + 1.0);
                }
                ImageSize::new(w as u32, h as u32).expect("non-zero size")
            });
            let study = StudyRecord {
                study_id: study_id.clone(),
                image_ref: String::new(),
                original_size: size,
                pixel_spacing: PixelSpacing::new(1.0, 1.0).expect("positive spacing"),
                ground_truth_report: String::new(),
                model_reports: BTreeMap::new(),
                model_image_sizes: BTreeMap::new(),
            };
            studies.insert(
                study_id.clone(),
                Entry {
                    study,
                    authoritative: false,
                },
            );
        }
        Self {
            backend: FixtureBackend::new(id, store),
            studies,
        }
    }

    pub fn study_count(&self) -> usize {
        self.studies.len()
    }

    pub fn router(self) -> Router {
        Router::new()
            .route(EXISTS_PATH, post(exists))
            .route(FIND_PATH, post(find))
            .route(SEGMENT_PATH, post(segment))
            .with_state(Arc::new(self))
    }

    /// Blocks serving on `addr` until the process ends.
    pub fn serve(self, addr: &str) -> Result<(), ServeError> {
        let listener = bind(addr)?;
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            axum::serve(listener, self.router()).await
        })?;
        Ok(())
    }

    /// Starts serving on a background thread and returns once the socket is
    /// bound. Use `127.0.0.1:0` to pick a free port.
    pub fn spawn(self, addr: &str) -> Result<RunningServer, ServeError> {
        spawn_router(self.router(), addr)
    }
}

/// Runs any router on a background thread until the handle is dropped.
pub fn spawn_router(router: Router, addr: &str) -> Result<RunningServer, ServeError> {
    let listener = bind(addr)?;
    let local = listener.local_addr()?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            axum::serve(listener, router)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        })
    });
    Ok(RunningServer {
        addr: local,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

fn bind(addr: &str) -> Result<std::net::TcpListener, ServeError> {
    let listener = std::net::TcpListener::bind(addr).map_err(|source| ServeError::Bind {
        addr: addr.to_string(),
        source,
    })?;
    listener.set_nonblocking(true)?;
    Ok(listener)
}

/// Handle to a server started with [`FixtureServer::spawn`]; stops it on drop.
pub struct RunningServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl RunningServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn error(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody::new(code, message))).into_response()
}

fn backend_error(e: BackendError) -> Response {
    match e {
        BackendError::Rejected { code, message } => error(StatusCode::BAD_REQUEST, &code, message),
        other => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
    }
}

fn ok<T: Serialize>(body: T) -> Response {
    (StatusCode::OK, Json(body)).into_response()
}

fn lookup<'a>(server: &'a FixtureServer, body: &[u8]) -> Result<(&'a Entry, String), Response> {
    let req: ObjectRequest = serde_json::from_slice(body)
        .map_err(|e| error(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))?;
    let entry = server
        .studies
        .get(&req.image_id)
        .ok_or_else(|| error(StatusCode::NOT_FOUND, "unknown_image", format!("no image {:?}", req.image_id)))?;
    Ok((entry, req.object_name))
}

async fn exists(State(server): State<Arc<FixtureServer>>, body: Bytes) -> Response {
    let (entry, name) = match lookup(&server, &body) {
        Ok(v) => v,
        Err(r) => return r,
    };
    match server.backend.exists(&entry.study, &name) {
        Ok(e) => ok(ExistsResponse {
            exists: e.exists,
            confidence: e.confidence,
        }),
        Err(e) => backend_error(e),
    }
}

async fn find(State(server): State<Arc<FixtureServer>>, body: Bytes) -> Response {
    let (entry, name) = match lookup(&server, &body) {
        Ok(v) => v,
        Err(r) => return r,
    };
    match server.backend.find(&entry.study, &name) {
        Ok(objects) => ok(FindResponse {
            image_size: entry.authoritative.then_some(entry.study.original_size),
            detections: objects
                .iter()
                .map(|o| Detection {
                    bbox: o.bbox.as_array(),
                    confidence: o.confidence,
                })
                .collect(),
        }),
        Err(e) => backend_error(e),
    }
}

async fn segment(State(server): State<Arc<FixtureServer>>, body: Bytes) -> Response {
    let (entry, name) = match lookup(&server, &body) {
        Ok(v) => v,
        Err(r) => return r,
    };
    match server.backend.segment(&entry.study, &name) {
        Ok(seg) => ok(SegmentResponse {
            image_size: seg.mask.size,
            rle: seg.mask.runs.clone(),
            starts_with: seg.mask.starts_with,
        }),
        Err(e) => backend_error(e),
    }
}
