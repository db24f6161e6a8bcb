//! Collection of human reformulations and pairwise judgments.
//!
//! Tasks are handed out under time-limited leases. Every change is an event
//! appended to a log, with periodic snapshots; the in-memory state is rebuilt
//! from the two on start. Exports use the [`crate::analysis`] and
//! [`crate::humaneval`] record types.

mod service;
mod store;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::humaneval::Axis;

pub use service::{router, serve, AnnotateServer, GUIDELINES};
pub use store::{AnnotateOptions, AnnotationStore, Counts};

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("task `{0}` already exists")]
    DuplicateTask(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("unknown batch `{0}`")]
    UnknownBatch(String),
    #[error("unknown submission {0}")]
    UnknownSubmission(u64),
    #[error("lease on task `{0}` is missing, expired or held by another annotator")]
    StaleLease(String),
    #[error("annotator `{annotator}` already submitted task `{task}`")]
    DoubleSubmission { task: String, annotator: String },
    #[error("batch `{batch}` has {available} submissions, {requested} requested")]
    NotEnoughSubmissions {
        batch: String,
        available: usize,
        requested: usize,
    },
    #[error("store {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt store {path}: {message}")]
    Corrupt { path: std::path::PathBuf, message: String },
}

impl AnnotateError {
    pub fn is_user_error(&self) -> bool {
        !matches!(self, AnnotateError::Io { .. } | AnnotateError::Corrupt { .. })
    }
}

pub type Result<T> = std::result::Result<T, AnnotateError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Reformulation,
    Comparison,
}

impl std::str::FromStr for TaskKind {
    type Err = AnnotateError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reformulation" => Ok(TaskKind::Reformulation),
            "comparison" => Ok(TaskKind::Comparison),
            _ => Err(AnnotateError::Malformed(format!("unknown task kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Open,
    Assigned,
    Done,
}

fn default_language() -> String {
    "en".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Reformulation {
        caption: String,
        #[serde(default = "default_language")]
        language: String,
    },
    Comparison {
        caption_a: String,
        caption_b: String,
        axes: Vec<Axis>,
    },
}

impl Payload {
    pub fn kind(&self) -> TaskKind {
        match self {
            Payload::Reformulation { .. } => TaskKind::Reformulation,
            Payload::Comparison { .. } => TaskKind::Comparison,
        }
    }
}

/// One item to annotate. `image_id` defaults to the item id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskItem {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    pub image_uri: String,
    #[serde(flatten)]
    pub payload: Payload,
}

/// Which caption a comparison shows on the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub id: String,
    pub annotator_id: String,
    pub deadline_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub id: String,
    pub kind: TaskKind,
    pub batch_id: String,
    pub image_id: String,
    pub image_uri: String,
    pub payload: Payload,
    pub status: TaskStatus,
    /// Submissions needed before the task is done.
    pub multiplicity: usize,
    pub submissions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<Side>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lease: Option<Lease>,
}

/// A per-axis choice as displayed to the annotator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shown {
    Left,
    Right,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SubmissionBody {
    Reformulation { text: String },
    Comparison { choices: BTreeMap<Axis, Shown> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub task_id: String,
    pub annotator_id: String,
    /// Lease the submission answers; a repeat with the same lease and body
    /// is acknowledged again instead of rejected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lease_id: Option<String>,
    pub body: SubmissionBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionRecord {
    pub id: u64,
    pub task_id: String,
    pub annotator_id: String,
    pub timestamp_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lease_id: Option<String>,
    pub body: SubmissionBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub submission_id: u64,
    pub task_status: TaskStatus,
    /// True when this repeated an already stored submission.
    pub replay: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub submission_id: u64,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock(AtomicU64::new(start_ms))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}
