//! Clients for the captioner, translator, reformulator, embedder and trainer
//! roles, plus an in-repo mock suite speaking the same wire protocol.

pub mod client;
pub mod mock;
pub mod server;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::corpus::{CaptionRecord, DatasetManifest, ImageRef, Origin};
use crate::metrics::{MetricsError, TokenEmbedder};
use client::HttpClient;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
    #[error("endpoint is a {got} backend, expected {expected}")]
    WrongKind { expected: BackendKind, got: BackendKind },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("request to {url} failed: {message}{}", ids_suffix(.ids))]
    Transport {
        url: String,
        message: String,
        ids: Vec<String>,
    },
    #[error("{url} answered {status}: {message}{}", ids_suffix(.ids))]
    Protocol {
        url: String,
        status: u16,
        message: String,
        ids: Vec<String>,
    },
    #[error("could not decode response from {url}: {message}")]
    Decode { url: String, message: String },
    #[error("backend returned {got} results for {expected} inputs")]
    LengthMismatch { expected: usize, got: usize },
    #[error("embedding dimension changed from {expected} to {got}")]
    DimensionDrift { expected: usize, got: usize },
    #[error("training job failed: {0}")]
    TrainFailed(String),
    #[error("training job `{job_id}` did not finish in time")]
    PollTimeout { job_id: String },
}

fn ids_suffix(ids: &[String]) -> String {
    if ids.is_empty() {
        String::new()
    } else {
        format!(" (inputs: {})", ids.join(", "))
    }
}

impl BackendError {
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            BackendError::Config(_) | BackendError::WrongKind { .. } | BackendError::Precondition(_)
        )
    }

    fn with_ids(self, chunk_ids: Vec<String>) -> Self {
        match self {
            BackendError::Transport { url, message, .. } => BackendError::Transport {
                url,
                message,
                ids: chunk_ids,
            },
            BackendError::Protocol {
                url, status, message, ..
            } => BackendError::Protocol {
                url,
                status,
                message,
                ids: chunk_ids,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, BackendError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Captioner,
    Translator,
    Reformulator,
    Embedder,
    Trainer,
}

impl BackendKind {
    pub const ALL: [BackendKind; 5] = [
        BackendKind::Captioner,
        BackendKind::Translator,
        BackendKind::Reformulator,
        BackendKind::Embedder,
        BackendKind::Trainer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Captioner => "captioner",
            BackendKind::Translator => "translator",
            BackendKind::Reformulator => "reformulator",
            BackendKind::Embedder => "embedder",
            BackendKind::Trainer => "trainer",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self> {
        BackendKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| BackendError::Config(format!("unknown backend kind `{s}`")))
    }
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_batch() -> usize {
    32
}
fn default_max_retries() -> u32 {
    3
}
fn default_max_in_flight() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    50
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendEndpoint {
    pub kind: BackendKind,
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub url: String,
    /// `name@version`; part of every pipeline cache key.
    pub identity: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// First retry delay; doubles on every further attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl BackendEndpoint {
    pub fn new(kind: BackendKind, url: impl Into<String>, identity: impl Into<String>) -> Self {
        BackendEndpoint {
            kind,
            url: url.into(),
            identity: identity.into(),
            timeout_ms: default_timeout_ms(),
            max_batch: default_max_batch(),
            max_retries: default_max_retries(),
            max_in_flight: default_max_in_flight(),
            backoff_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.identity.trim().is_empty() {
            return Err(BackendError::Config(format!(
                "{} endpoint has an empty identity",
                self.kind
            )));
        }
        if self.max_batch == 0 {
            return Err(BackendError::Config(format!("{} endpoint has max_batch 0", self.kind)));
        }
        if self.max_in_flight == 0 {
            return Err(BackendError::Config(format!(
                "{} endpoint has max_in_flight 0",
                self.kind
            )));
        }
        if !(self.url.starts_with("http://") || self.url.starts_with("https://")) {
            return Err(BackendError::Config(format!(
                "{} endpoint url `{}` is not http(s)",
                self.kind, self.url
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub id: String,
    pub parent: Option<String>,
    /// Content digest of the training data.
    pub trained_on: String,
    pub epochs: u32,
}

/// Request and response bodies.
pub mod wire {
    use serde::{Deserialize, Serialize};

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct WireImage {
        pub id: String,
        pub uri: String,
    }

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct CaptionRequest {
        pub checkpoint: String,
        pub seed: u64,
        pub images: Vec<WireImage>,
    }

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct WireCaption {
        pub image_id: String,
        pub text: String,
    }

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct CaptionResponse {
        pub captions: Vec<WireCaption>,
    }

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct TranslateRequest {
        pub src: String,
        pub tgt: String,
        pub texts: Vec<String>,
    }

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct TranslateResponse {
        pub texts: Vec<String>,
    }

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct ReformulateItem {
        pub image_uri: String,
        pub caption: String,
    }

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct ReformulateRequest {
        pub items: Vec<ReformulateItem>,
    }

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct ReformulateResponse {
        pub captions: Vec<String>,
    }

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct EmbedRequest {
        pub tokens: Vec<Vec<String>>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct EmbedResponse {
        pub vectors: Vec<Vec<Vec<f64>>>,
        pub dim: usize,
    }

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct TrainRequest {
        pub manifest_uri: String,
        pub init: Option<String>,
        pub epochs: u32,
        pub seed: u64,
    }

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct TrainResponse {
        pub job_id: String,
    }

    #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
    #[serde(rename_all = "lowercase")]
    pub enum JobState {
        Running,
        Done,
        Failed,
    }

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct JobStatus {
        pub status: JobState,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub checkpoint: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub error: Option<String>,
    }
}

/// A client bound to one endpoint. Shareable across threads.
pub struct Backend {
    endpoint: BackendEndpoint,
    http: HttpClient,
    embed_dim: AtomicUsize,
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backend").field("endpoint", &self.endpoint).finish()
    }
}

impl Backend {
    pub fn new(endpoint: BackendEndpoint) -> Result<Self> {
        endpoint.validate()?;
        Ok(Backend {
            http: HttpClient::new(&endpoint),
            endpoint,
            embed_dim: AtomicUsize::new(0),
        })
    }

    pub fn endpoint(&self) -> &BackendEndpoint {
        &self.endpoint
    }

    pub fn identity(&self) -> &str {
        &self.endpoint.identity
    }

    /// Wire requests sent so far, retries included.
    pub fn requests_sent(&self) -> usize {
        self.http.requests_sent()
    }

    fn expect(&self, kind: BackendKind) -> Result<()> {
        if self.endpoint.kind == kind {
            Ok(())
        } else {
            Err(BackendError::WrongKind {
                expected: kind,
                got: self.endpoint.kind,
            })
        }
    }

    pub fn health(&self) -> Result<()> {
        self.http.get_ok("/healthz")
    }

    /// One caption per image, in input order, tagged `origin = model`.
    pub fn caption_batch(
        &self,
        checkpoint: &CheckpointRef,
        images: &[ImageRef],
        seed: u64,
        language: &str,
    ) -> Result<Vec<CaptionRecord>> {
        self.expect(BackendKind::Captioner)?;
        let texts = self.http.chunked(images, |chunk| {
            let req = wire::CaptionRequest {
                checkpoint: checkpoint.id.clone(),
                seed,
                images: chunk
                    .iter()
                    .map(|i| wire::WireImage {
                        id: i.id.clone(),
                        uri: i.uri.clone(),
                    })
                    .collect(),
            };
            let resp: wire::CaptionResponse = self
                .http
                .post("/v1/caption", &req)
                .map_err(|e| e.with_ids(chunk.iter().map(|i| i.id.clone()).collect()))?;
            if resp.captions.len() == chunk.len() {
                for (img, cap) in chunk.iter().zip(&resp.captions) {
                    if cap.image_id != img.id {
                        return Err(BackendError::Decode {
                            url: self.endpoint.url.clone(),
                            message: format!(
                                "caption for `{}` returned where `{}` was expected",
                                cap.image_id, img.id
                            ),
                        });
                    }
                }
            }
            Ok(resp.captions.into_iter().map(|c| c.text).collect())
        })?;
        let provenance = format!("{}:{}:seed={}", self.endpoint.identity, checkpoint.id, seed);
        Ok(images
            .iter()
            .zip(texts)
            .map(|(img, text)| {
                CaptionRecord::new(&img.id, text, language, Origin::Model).with_provenance(provenance.clone())
            })
            .collect())
    }

    pub fn translate_batch(&self, src: &str, tgt: &str, texts: &[String]) -> Result<Vec<String>> {
        self.expect(BackendKind::Translator)?;
        if src == tgt {
            return Err(BackendError::Precondition(format!(
                "source and target language are both `{src}`"
            )));
        }
        self.http.chunked(texts, |chunk| {
            let req = wire::TranslateRequest {
                src: src.to_owned(),
                tgt: tgt.to_owned(),
                texts: chunk.to_vec(),
            };
            let resp: wire::TranslateResponse = self.http.post("/v1/translate", &req)?;
            Ok(resp.texts)
        })
    }

    /// An empty caption asks the reformulator to caption the image from scratch.
    pub fn reformulate_batch(&self, items: &[(ImageRef, String)]) -> Result<Vec<String>> {
        self.expect(BackendKind::Reformulator)?;
        self.http.chunked(items, |chunk| {
            let req = wire::ReformulateRequest {
                items: chunk
                    .iter()
                    .map(|(img, caption)| wire::ReformulateItem {
                        image_uri: img.uri.clone(),
                        caption: caption.clone(),
                    })
                    .collect(),
            };
            let resp: wire::ReformulateResponse = self
                .http
                .post("/v1/reformulate", &req)
                .map_err(|e| e.with_ids(chunk.iter().map(|(i, _)| i.id.clone()).collect()))?;
            Ok(resp.captions)
        })
    }

    pub fn embed_batch(&self, token_lists: &[Vec<String>]) -> Result<Vec<Vec<Vec<f64>>>> {
        self.expect(BackendKind::Embedder)?;
        let vectors = self.http.chunked(token_lists, |chunk| {
            let req = wire::EmbedRequest { tokens: chunk.to_vec() };
            let resp: wire::EmbedResponse = self.http.post("/v1/embed", &req)?;
            for (tokens, vecs) in chunk.iter().zip(&resp.vectors) {
                if tokens.len() != vecs.len() {
                    return Err(BackendError::LengthMismatch {
                        expected: tokens.len(),
                        got: vecs.len(),
                    });
                }
                if let Some(v) = vecs.iter().find(|v| v.len() != resp.dim) {
                    return Err(BackendError::DimensionDrift {
                        expected: resp.dim,
                        got: v.len(),
                    });
                }
            }
            self.check_dim(resp.dim)?;
            Ok(resp.vectors)
        })?;
        Ok(vectors)
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        match self
            .embed_dim
            .compare_exchange(0, dim, Ordering::SeqCst, Ordering::SeqCst)
        {
            Ok(_) => Ok(()),
            Err(known) if known == dim => Ok(()),
            Err(known) => Err(BackendError::DimensionDrift {
                expected: known,
                got: dim,
            }),
        }
    }

    /// Submits a training job and polls until it finishes. `manifest_uri`
    /// must be resolvable by the backend.
    pub fn train(
        &self,
        manifest_uri: &str,
        manifest: &DatasetManifest,
        init: Option<&CheckpointRef>,
        epochs: u32,
        seed: u64,
    ) -> Result<CheckpointRef> {
        self.expect(BackendKind::Trainer)?;
        if epochs == 0 {
            return Err(BackendError::Precondition("epochs must be at least 1".into()));
        }
        let req = wire::TrainRequest {
            manifest_uri: manifest_uri.to_owned(),
            init: init.map(|c| c.id.clone()),
            epochs,
            seed,
        };
        let job: wire::TrainResponse = self.http.post("/v1/train", &req)?;
        let deadline = Instant::now() + Duration::from_millis(self.endpoint.timeout_ms);
        let mut delay = Duration::from_millis(5);
        loop {
            let status: wire::JobStatus = self.http.get(&format!("/v1/train/{}", job.job_id))?;
            match status.status {
                wire::JobState::Done => {
                    let id = status.checkpoint.ok_or_else(|| BackendError::Decode {
                        url: self.endpoint.url.clone(),
                        message: "finished job has no checkpoint".into(),
                    })?;
                    return Ok(CheckpointRef {
                        id,
                        parent: init.map(|c| c.id.clone()),
                        trained_on: manifest.content_digest.clone(),
                        epochs,
                    });
                }
                wire::JobState::Failed => {
                    return Err(BackendError::TrainFailed(
                        status.error.unwrap_or_else(|| "unknown error".into()),
                    ))
                }
                wire::JobState::Running => {}
            }
            if Instant::now() >= deadline {
                return Err(BackendError::PollTimeout { job_id: job.job_id });
            }
            std::thread::sleep(delay);
            delay = (delay * 2).min(Duration::from_millis(200));
        }
    }
}

impl TokenEmbedder for Backend {
    fn embed(&self, token_lists: &[Vec<String>]) -> std::result::Result<Vec<Vec<Vec<f64>>>, MetricsError> {
        self.embed_batch(token_lists)
            .map_err(|e| MetricsError::Embedder(e.to_string()))
    }
}
