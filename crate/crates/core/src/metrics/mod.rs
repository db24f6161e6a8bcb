//! Caption evaluation metrics.
//!
//! All scorers operate on an [`EvalSet`]: one tokenized candidate per image
//! with a non-empty, possibly ragged, list of tokenized references.

mod bertscore;
mod bleu;
mod cider;
mod levenshtein;
mod summary;
mod tokenize;

use std::collections::HashSet;

pub use bertscore::{bert_score, BertScoreItem, BertScoreOptions, BertScoreReport, TokenEmbedder};
pub use bleu::{bleu4, BleuReport};
pub use cider::{cider_d, CiderReport, CIDER_SIGMA};
pub use levenshtein::{edit_distance, levenshtein_words};
pub(crate) use summary::fmt1;
pub use summary::{summarize, MetricSummary};
pub use tokenize::{tokenize, TokenizedCaption};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("{metric} needs at least {needed} items, got {got}")]
    TooFewItems {
        metric: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("item `{0}` has no references")]
    MissingReferences(String),
    #[error("duplicate item `{0}`")]
    DuplicateItem(String),
    #[error("no scores to summarize")]
    NoScores,
    #[error("embedder failed: {0}")]
    Embedder(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedder returned {got} vectors for {expected} tokens")]
    VectorCount { expected: usize, got: usize },
    #[error("embedder returned a zero vector")]
    ZeroVector,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub image_id: String,
    pub candidate: TokenizedCaption,
    pub references: Vec<TokenizedCaption>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalSet {
    items: Vec<EvalItem>,
}

impl EvalSet {
    pub fn new(items: Vec<EvalItem>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(items.len());
        for item in &items {
            if item.references.is_empty() {
                return Err(MetricsError::MissingReferences(item.image_id.clone()));
            }
            if !seen.insert(item.image_id.as_str()) {
                return Err(MetricsError::DuplicateItem(item.image_id.clone()));
            }
        }
        Ok(EvalSet { items })
    }

    /// Tokenizes raw `(image_id, candidate, references)` triples.
    pub fn from_texts<I, S, R>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S, R)>,
        S: AsRef<str>,
        R: IntoIterator,
        R::Item: AsRef<str>,
    {
        let items = items
            .into_iter()
            .map(|(id, cand, refs)| EvalItem {
                image_id: id.as_ref().to_owned(),
                candidate: tokenize(cand.as_ref()),
                references: refs.into_iter().map(|r| tokenize(r.as_ref())).collect(),
            })
            .collect();
        EvalSet::new(items)
    }

    pub fn items(&self) -> &[EvalItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// All reference captions, in item order.
    pub fn references(&self) -> Vec<TokenizedCaption> {
        self.items.iter().flat_map(|i| i.references.iter().cloned()).collect()
    }
}

/// Metric names as used in reports and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    Bleu4,
    CiderD,
    BertScore,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Bleu4 => "bleu4",
            MetricKind::CiderD => "cider_d",
            MetricKind::BertScore => "bert_score",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bleu4" | "bleu" => Some(MetricKind::Bleu4),
            "cider_d" | "cider" => Some(MetricKind::CiderD),
            "bert_score" | "bertscore" => Some(MetricKind::BertScore),
            _ => None,
        }
    }

    /// Column heading in rendered tables.
    pub fn label(self) -> &'static str {
        match self {
            MetricKind::Bleu4 => "B@4",
            MetricKind::CiderD => "CIDEr",
            MetricKind::BertScore => "BS",
        }
    }
}
