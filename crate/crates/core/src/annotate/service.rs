use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::*;
use crate::http::{serve_blocking, BackgroundServer};
use crate::metrics::{levenshtein_words, tokenize};

/// Instructions shown next to the reformulation editor.
pub const GUIDELINES: &str = "\
You will see a photo and a description of it that was written by a computer.
Rewrite the description so that it is correct for the photo.

- Fix every mistake: wrong objects, actions, attributes, counts or places.
- Keep your version as close to the original as you can. Change only what is
  wrong and leave correct parts untouched, including their wording.
- If the description is already correct, submit it unchanged.
- Write one fluent sentence. Do not add details that are not visible.
";

type Shared = Arc<AnnotationStore>;

#[derive(Serialize)]
struct ErrorBody {
    error: String,
    code: &'static str,
}

fn status_of(e: &AnnotateError) -> (StatusCode, &'static str) {
    match e {
        AnnotateError::Malformed(_) => (StatusCode::BAD_REQUEST, "malformed"),
        AnnotateError::UnknownTask(_) => (StatusCode::NOT_FOUND, "unknown_task"),
        AnnotateError::UnknownBatch(_) => (StatusCode::NOT_FOUND, "unknown_batch"),
        AnnotateError::UnknownSubmission(_) => (StatusCode::NOT_FOUND, "unknown_submission"),
        AnnotateError::DuplicateTask(_) => (StatusCode::CONFLICT, "duplicate_task"),
        AnnotateError::StaleLease(_) => (StatusCode::CONFLICT, "stale_lease"),
        AnnotateError::DoubleSubmission { .. } => (StatusCode::CONFLICT, "double_submission"),
        AnnotateError::NotEnoughSubmissions { .. } => (StatusCode::CONFLICT, "not_enough_submissions"),
        AnnotateError::Io { .. } | AnnotateError::Corrupt { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "store"),
    }
}

struct ApiError(AnnotateError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = status_of(&self.0);
        (
            status,
            Json(ErrorBody {
                error: self.0.to_string(),
                code,
            }),
        )
            .into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

async fn blocking<T: Send + 'static>(
    store: Shared,
    f: impl FnOnce(&AnnotationStore) -> Result<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ApiError(AnnotateError::Malformed(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

fn default_multiplicity() -> usize {
    1
}

#[derive(Deserialize)]
struct CreateRequest {
    kind: TaskKind,
    items: Vec<TaskItem>,
    #[serde(default)]
    batch: Option<String>,
    #[serde(default = "default_multiplicity")]
    multiplicity: usize,
}

#[derive(Serialize)]
struct CreateResponse {
    batch_id: String,
    task_ids: Vec<String>,
}

async fn create(State(store): State<Shared>, Json(req): Json<CreateRequest>) -> ApiResult<impl IntoResponse> {
    let (batch_id, task_ids) = blocking(store, move |s| {
        s.create_tasks(req.kind, &req.items, req.batch.as_deref(), req.multiplicity)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(CreateResponse { batch_id, task_ids })))
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: String,
    kind: TaskKind,
}

async fn next(State(store): State<Shared>, Query(q): Query<NextQuery>) -> ApiResult<Response> {
    let task = blocking(store, move |s| s.next_task(&q.annotator, q.kind)).await?;
    Ok(match task {
        Some(t) => Json(t).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn task(State(store): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<AnnotationTask>> {
    store.task(&id).map(Json).map_err(ApiError)
}

async fn stats(State(store): State<Shared>) -> Json<Counts> {
    Json(store.counts())
}

async fn submit(State(store): State<Shared>, Json(sub): Json<Submission>) -> ApiResult<impl IntoResponse> {
    let ack = blocking(store, move |s| s.submit(&sub)).await?;
    let status = if ack.replay {
        StatusCode::OK
    } else {
        StatusCode::CREATED
    };
    Ok((status, Json(ack)))
}

async fn review(State(store): State<Shared>, Json(r): Json<Review>) -> ApiResult<StatusCode> {
    blocking(store, move |s| s.review(r)).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct ExportQuery {
    kind: TaskKind,
}

async fn export(State(store): State<Shared>, Query(q): Query<ExportQuery>) -> Response {
    ([(header::CONTENT_TYPE, "application/x-ndjson")], store.export(q.kind)).into_response()
}

#[derive(Deserialize)]
struct QcQuery {
    batch: String,
    k: usize,
    #[serde(default)]
    seed: u64,
}

async fn qc(State(store): State<Shared>, Query(q): Query<QcQuery>) -> ApiResult<Json<Vec<SubmissionRecord>>> {
    store.qc_sample(&q.batch, q.k, q.seed).map(Json).map_err(ApiError)
}

#[derive(Deserialize)]
struct DiffRequest {
    original: String,
    edited: String,
}

#[derive(Serialize)]
struct DiffResponse {
    distance: usize,
}

async fn diff(Json(d): Json<DiffRequest>) -> Json<DiffResponse> {
    Json(DiffResponse {
        distance: levenshtein_words(&tokenize(&d.original), &tokenize(&d.edited)),
    })
}

/// The REST API, plus the web UI bundle from `ui_dir` when given.
pub fn router(store: Arc<AnnotationStore>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(|| async { "ok" }))
        .route("/api/guidelines", get(|| async { GUIDELINES }))
        .route("/api/tasks", post(create))
        .route("/api/tasks/next", get(next))
        .route("/api/tasks/{id}", get(task))
        .route("/api/stats", get(stats))
        .route("/api/submissions", post(submit))
        .route("/api/reviews", post(review))
        .route("/api/export", get(export))
        .route("/api/qc", get(qc))
        .route("/api/diff", post(diff))
        .with_state(store);
    match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Serves the annotation API on `addr` until the process exits.
pub fn serve(addr: SocketAddr, store: Arc<AnnotationStore>, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    serve_blocking(addr, router(store, ui_dir), "annotation service")
}

/// The service on an ephemeral local port, stopped on drop.
pub struct AnnotateServer {
    store: Arc<AnnotationStore>,
    server: BackgroundServer,
}

impl AnnotateServer {
    pub fn start(store: Arc<AnnotationStore>, ui_dir: Option<PathBuf>) -> std::io::Result<Self> {
        let server = BackgroundServer::start(router(store.clone(), ui_dir))?;
        Ok(AnnotateServer { store, server })
    }

    pub fn url(&self) -> &str {
        self.server.url()
    }

    pub fn store(&self) -> &AnnotationStore {
        &self.store
    }
}
