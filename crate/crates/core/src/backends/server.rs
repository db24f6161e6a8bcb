//! HTTP mock servers for all five backend roles.
//!
//! Responses are cached per request id, so a retried request never runs
//! twice. `fail_next` makes the next requests answer 503 for retry tests.

// handlers return early with a ready `Response` as the error value
#![allow(clippy::result_large_err)]

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::Value;

use super::client::REQUEST_ID_HEADER;
use super::mock::{self, MockCheckpoint};
use super::wire::*;
use super::{BackendEndpoint, BackendKind};
use crate::corpus::read_canonical;
use crate::http::{serve_blocking, BackgroundServer};

#[derive(Debug, Clone)]
pub struct MockOptions {
    pub lambda: f64,
}

impl Default for MockOptions {
    fn default() -> Self {
        MockOptions {
            lambda: mock::MOCK_LAMBDA,
        }
    }
}

#[derive(Default)]
struct Counters {
    requests: Mutex<HashMap<String, usize>>,
    executed: AtomicUsize,
    fail_remaining: AtomicUsize,
}

struct MockState {
    opts: MockOptions,
    counters: Counters,
    cache: Mutex<HashMap<(String, String), Value>>,
    jobs: Arc<Mutex<HashMap<String, JobStatus>>>,
}

type Shared = Arc<MockState>;

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

/// Counting, fault injection and request-id replay around one handler body.
fn respond<F>(st: &MockState, route: &str, headers: &HeaderMap, compute: F) -> Response
where
    F: FnOnce() -> Result<Value, Response>,
{
    *lock(&st.counters.requests).entry(route.to_owned()).or_insert(0) += 1;
    if st
        .counters
        .fail_remaining
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        return error(StatusCode::SERVICE_UNAVAILABLE, "injected failure");
    }
    let request_id = headers
        .get(REQUEST_ID_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned);
    if let Some(id) = &request_id {
        if let Some(v) = lock(&st.cache).get(&(route.to_owned(), id.clone())) {
            return Json(v.clone()).into_response();
        }
    }
    st.counters.executed.fetch_add(1, Ordering::SeqCst);
    match compute() {
        Ok(v) => {
            if let Some(id) = request_id {
                lock(&st.cache).insert((route.to_owned(), id), v.clone());
            }
            Json(v).into_response()
        }
        Err(resp) => resp,
    }
}

fn to_value<T: serde::Serialize>(v: T) -> Result<Value, Response> {
    serde_json::to_value(v).map_err(|e| error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

async fn caption(State(st): State<Shared>, headers: HeaderMap, Json(req): Json<CaptionRequest>) -> Response {
    respond(&st, "caption", &headers, || {
        let ck = MockCheckpoint::parse(&req.checkpoint).ok_or_else(|| {
            error(
                StatusCode::BAD_REQUEST,
                format!("unknown checkpoint `{}`", req.checkpoint),
            )
        })?;
        let captions = req
            .images
            .iter()
            .map(|img| WireCaption {
                image_id: img.id.clone(),
                text: mock::caption(&ck, &img.uri, req.seed, st.opts.lambda),
            })
            .collect();
        to_value(CaptionResponse { captions })
    })
}

async fn translate(State(st): State<Shared>, headers: HeaderMap, Json(req): Json<TranslateRequest>) -> Response {
    respond(&st, "translate", &headers, || {
        if req.src == req.tgt {
            return Err(error(StatusCode::BAD_REQUEST, "source and target language are equal"));
        }
        let texts = req
            .texts
            .iter()
            .map(|t| mock::translate(t, &req.src, &req.tgt))
            .collect();
        to_value(TranslateResponse { texts })
    })
}

async fn reformulate(State(st): State<Shared>, headers: HeaderMap, Json(req): Json<ReformulateRequest>) -> Response {
    respond(&st, "reformulate", &headers, || {
        let captions = req
            .items
            .iter()
            .map(|i| mock::reformulate(&i.caption, &i.image_uri))
            .collect();
        to_value(ReformulateResponse { captions })
    })
}

async fn embed(State(st): State<Shared>, headers: HeaderMap, Json(req): Json<EmbedRequest>) -> Response {
    respond(&st, "embed", &headers, || {
        let vectors = req
            .tokens
            .iter()
            .map(|list| list.iter().map(|t| mock::embed_token(t)).collect())
            .collect();
        to_value(EmbedResponse {
            vectors,
            dim: mock::EMBED_DIM,
        })
    })
}

fn run_training(req: &TrainRequest) -> Result<String, String> {
    let parent = match &req.init {
        Some(id) => Some(MockCheckpoint::parse(id).ok_or_else(|| format!("unknown checkpoint `{id}`"))?),
        None => None,
    };
    let path = req.manifest_uri.strip_prefix("file://").unwrap_or(&req.manifest_uri);
    let dataset = read_canonical(Path::new(path)).map_err(|e| e.to_string())?;
    Ok(mock::train(parent.as_ref(), &dataset, req.epochs).id)
}

async fn train(State(st): State<Shared>, headers: HeaderMap, Json(req): Json<TrainRequest>) -> Response {
    respond(&st, "train", &headers, || {
        if req.epochs == 0 {
            return Err(error(StatusCode::BAD_REQUEST, "epochs must be at least 1"));
        }
        let job_id = uuid::Uuid::new_v4().to_string();
        lock(&st.jobs).insert(
            job_id.clone(),
            JobStatus {
                status: JobState::Running,
                checkpoint: None,
                error: None,
            },
        );
        let jobs = st.jobs.clone();
        let id = job_id.clone();
        tokio::task::spawn_blocking(move || {
            let status = match run_training(&req) {
                Ok(ck) => JobStatus {
                    status: JobState::Done,
                    checkpoint: Some(ck),
                    error: None,
                },
                Err(e) => JobStatus {
                    status: JobState::Failed,
                    checkpoint: None,
                    error: Some(e),
                },
            };
            lock(&jobs).insert(id, status);
        });
        to_value(TrainResponse { job_id })
    })
}

async fn job(State(st): State<Shared>, UrlPath(job_id): UrlPath<String>) -> Response {
    *lock(&st.counters.requests).entry("train_status".into()).or_insert(0) += 1;
    match lock(&st.jobs).get(&job_id) {
        Some(s) => Json(s.clone()).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no job `{job_id}`")),
    }
}

fn router_with(state: Shared) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/v1/caption", post(caption))
        .route("/v1/translate", post(translate))
        .route("/v1/reformulate", post(reformulate))
        .route("/v1/embed", post(embed))
        .route("/v1/train", post(train))
        .route("/v1/train/{job_id}", get(job))
        .with_state(state)
}

fn new_state(opts: MockOptions) -> Shared {
    Arc::new(MockState {
        opts,
        counters: Counters::default(),
        cache: Mutex::new(HashMap::new()),
        jobs: Arc::new(Mutex::new(HashMap::new())),
    })
}

/// Router serving every mock role.
pub fn router(opts: MockOptions) -> Router {
    router_with(new_state(opts))
}

/// Serves the mock suite on `addr` until the process exits.
pub fn serve_forever(addr: SocketAddr, opts: MockOptions) -> std::io::Result<()> {
    serve_blocking(addr, router(opts), "mock backends")
}

/// A mock server on an ephemeral local port, running on a background
/// runtime until dropped.
pub struct MockServer {
    state: Shared,
    server: BackgroundServer,
}

impl MockServer {
    pub fn start(opts: MockOptions) -> std::io::Result<Self> {
        let state = new_state(opts);
        let server = BackgroundServer::start(router_with(state.clone()))?;
        Ok(MockServer { state, server })
    }

    pub fn url(&self) -> &str {
        self.server.url()
    }

    /// Endpoint for `kind` pointing at this server.
    pub fn endpoint(&self, kind: BackendKind) -> BackendEndpoint {
        BackendEndpoint::new(kind, self.url(), format!("mock-{kind}@1"))
    }

    /// Requests that reached `route` (`caption`, `translate`, `reformulate`,
    /// `embed`, `train`, `train_status`), failed ones included.
    pub fn requests(&self, route: &str) -> usize {
        lock(&self.state.counters.requests).get(route).copied().unwrap_or(0)
    }

    /// Requests that were actually computed rather than replayed or failed.
    pub fn executed(&self) -> usize {
        self.state.counters.executed.load(Ordering::SeqCst)
    }

    /// Makes the next `n` requests answer 503.
    pub fn fail_next(&self, n: usize) {
        self.state.counters.fail_remaining.store(n, Ordering::SeqCst);
    }
}
