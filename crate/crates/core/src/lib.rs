//! Reformulation-based data augmentation for low-resource image captioning.
//!
//! The crate is organised around the loop that turns a small target-language
//! caption set into extra training data: a base captioner is trained, captions
//! are generated for unannotated images, translated to English, corrected by a
//! reformulation model, translated back and used to continue training.
//!
//! * [`corpus`] ingests caption datasets into a canonical, content-addressed form.
//! * [`metrics`] implements BLEU-4, CIDEr-D, BERTScore matching and word-level
//!   edit distance.
//! * [`analysis`] and [`humaneval`] cover reformulation statistics and human
//!   preference aggregation.
//! * [`backends`] is the wire-protocol client for the external model roles, plus
//!   deterministic mock servers.
//! * [`pipeline`] plans and runs experiment variants as cached stage graphs.
//! * [`annotate`] is the HTTP service used to collect human annotations.

pub mod analysis;
pub mod annotate;
pub mod backends;
pub mod cli;
pub mod corpus;
pub mod digest;
mod http;
pub mod humaneval;
pub mod metrics;
pub mod pipeline;

pub use corpus::{CaptionRecord, Dataset, DatasetManifest, ImageRef, Origin, Split};
pub use metrics::{EvalSet, TokenizedCaption};
