//! Canonical caption datasets: ingestion, sampling, merging and the
//! content-addressed on-disk form.

mod canonical;
mod formats;
mod sampling;

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

pub use canonical::{read_canonical, write_canonical, DatasetManifest};
pub use formats::{ingest, ingest_groups, Format, IngestOptions};
pub use sampling::{merge, sample_one_caption_per_image, sample_subset};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("caption references unknown image `{0}`")]
    UnknownImage(String),
    #[error("duplicate image id `{0}`")]
    DuplicateImage(String),
    #[error("image id collision `{0}` while merging")]
    IdCollision(String),
    #[error("invalid image reference: {0}")]
    InvalidImage(String),
    #[error("empty caption text for image `{0}`")]
    EmptyCaption(String),
    #[error("invalid language code `{0}`")]
    InvalidLanguage(String),
    #[error("image `{0}` has no captions")]
    NoCaptions(String),
    #[error("subset size must be positive")]
    EmptySubset,
    #[error("subset of {requested} images requested from a dataset of {available}")]
    SubsetTooLarge { requested: usize, available: usize },
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("{0}")]
    Usage(String),
}

impl CorpusError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by the caller's input rather than the environment.
    pub fn is_user_error(&self) -> bool {
        match self {
            CorpusError::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => true,
        }
    }
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Human,
    Model,
    Translated,
    Reformulated,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Human => "human",
            Origin::Model => "model",
            Origin::Translated => "translated",
            Origin::Reformulated => "reformulated",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Additional,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Additional => "additional",
        })
    }
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "additional" => Ok(Split::Additional),
            other => Err(CorpusError::Usage(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub uri: String,
    pub dataset: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub text: String,
    pub language: String,
    pub origin: Origin,
    pub provenance: Option<String>,
}

impl CaptionRecord {
    pub fn new(
        image_id: impl Into<String>,
        text: impl Into<String>,
        language: impl Into<String>,
        origin: Origin,
    ) -> Self {
        CaptionRecord {
            image_id: image_id.into(),
            text: text.into(),
            language: language.into(),
            origin,
            provenance: None,
        }
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = Some(provenance.into());
        self
    }
}

/// Accepts the common BCP-47 shapes: a 2-3 letter primary subtag followed by
/// alphanumeric subtags of 1-8 characters (`de`, `en-US`, `zh-Hant-TW`).
pub fn is_valid_language(code: &str) -> bool {
    let mut parts = code.split('-');
    let primary = match parts.next() {
        Some(p) => p,
        None => return false,
    };
    if !(2..=3).contains(&primary.len()) || !primary.chars().all(|c| c.is_ascii_alphabetic()) {
        return false;
    }
    parts.all(|p| (1..=8).contains(&p.len()) && p.chars().all(|c| c.is_ascii_alphanumeric()))
}

pub(crate) fn normalize_text(text: &str) -> String {
    text.nfc().collect()
}

/// An image/caption split. Immutable once built; construct through
/// [`DatasetBuilder`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    split: Split,
    images: Vec<ImageRef>,
    captions: Vec<Vec<CaptionRecord>>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn builder(name: impl Into<String>, split: Split) -> DatasetBuilder {
        DatasetBuilder {
            dataset: Dataset {
                name: name.into(),
                split,
                images: Vec::new(),
                captions: Vec::new(),
                index: HashMap::new(),
            },
        }
    }

    pub fn empty(name: impl Into<String>, split: Split) -> Dataset {
        Dataset::builder(name, split).build()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn images(&self) -> &[ImageRef] {
        &self.images
    }

    pub fn image(&self, id: &str) -> Option<&ImageRef> {
        self.index.get(id).map(|&i| &self.images[i])
    }

    pub fn captions_for(&self, id: &str) -> &[CaptionRecord] {
        self.index.get(id).map(|&i| self.captions[i].as_slice()).unwrap_or(&[])
    }

    /// Images paired with their captions, in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = (&ImageRef, &[CaptionRecord])> {
        self.images.iter().zip(self.captions.iter().map(Vec::as_slice))
    }

    pub fn captions(&self) -> impl Iterator<Item = &CaptionRecord> {
        self.captions.iter().flatten()
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn caption_count(&self) -> usize {
        self.captions.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// SHA-256 of the sorted canonical lines; independent of insertion order.
    pub fn content_digest(&self) -> String {
        canonical::content_digest(self)
    }

    /// Rebuild with a new name, keeping contents.
    pub fn renamed(&self, name: impl Into<String>) -> Dataset {
        let mut d = self.clone();
        d.name = name.into();
        d
    }
}

pub struct DatasetBuilder {
    dataset: Dataset,
}

impl DatasetBuilder {
    pub fn add_image(&mut self, image: ImageRef) -> Result<&mut Self> {
        if image.id.trim().is_empty() {
            return Err(CorpusError::InvalidImage("empty image id".into()));
        }
        if image.uri.trim().is_empty() {
            return Err(CorpusError::InvalidImage(format!("empty uri for `{}`", image.id)));
        }
        if self.dataset.index.contains_key(&image.id) {
            return Err(CorpusError::DuplicateImage(image.id));
        }
        self.dataset.index.insert(image.id.clone(), self.dataset.images.len());
        self.dataset.images.push(image);
        self.dataset.captions.push(Vec::new());
        Ok(self)
    }

    /// Adds a caption after NFC normalisation. The image must already exist.
    pub fn add_caption(&mut self, mut record: CaptionRecord) -> Result<&mut Self> {
        let slot = *self
            .dataset
            .index
            .get(&record.image_id)
            .ok_or_else(|| CorpusError::UnknownImage(record.image_id.clone()))?;
        record.text = normalize_text(&record.text);
        if record.text.trim().is_empty() {
            return Err(CorpusError::EmptyCaption(record.image_id));
        }
        if !is_valid_language(&record.language) {
            return Err(CorpusError::InvalidLanguage(record.language));
        }
        self.dataset.captions[slot].push(record);
        Ok(self)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.dataset.index.contains_key(id)
    }

    pub fn build(self) -> Dataset {
        self.dataset
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(id: &str) -> ImageRef {
        ImageRef {
            id: id.into(),
            uri: format!("{id}.jpg"),
            dataset: "t".into(),
        }
    }

    #[test]
    fn language_codes() {
        for ok in ["de", "en", "en-US", "zh-Hant-TW", "fil"] {
            assert!(is_valid_language(ok), "{ok}");
        }
        for bad in ["", "d", "deutsch", "de_DE", "en-", "1a"] {
            assert!(!is_valid_language(bad), "{bad}");
        }
    }

    #[test]
    fn builder_rejects_bad_records() {
        let mut b = Dataset::builder("t", Split::Train);
        b.add_image(img("a")).unwrap();
        assert!(matches!(b.add_image(img("a")), Err(CorpusError::DuplicateImage(_))));
        assert!(matches!(
            b.add_caption(CaptionRecord::new("zz", "x", "de", Origin::Human)),
            Err(CorpusError::UnknownImage(_))
        ));
        assert!(matches!(
            b.add_caption(CaptionRecord::new("a", "   ", "de", Origin::Human)),
            Err(CorpusError::EmptyCaption(_))
        ));
        assert!(matches!(
            b.add_caption(CaptionRecord::new("a", "ok", "german", Origin::Human)),
            Err(CorpusError::InvalidLanguage(_))
        ));
    }

    #[test]
    fn captions_are_nfc_normalized() {
        let mut b = Dataset::builder("t", Split::Train);
        b.add_image(img("a")).unwrap();
        // "läuft" with a combining diaeresis
        b.add_caption(CaptionRecord::new("a", "la\u{308}uft", "de", Origin::Human))
            .unwrap();
        let d = b.build();
        assert_eq!(d.captions_for("a")[0].text, "l\u{e4}uft");
    }

    #[test]
    fn caption_less_images_allowed() {
        let mut b = Dataset::builder("imagenet", Split::Additional);
        b.add_image(img("n01")).unwrap();
        let d = b.build();
        assert_eq!(d.image_count(), 1);
        assert_eq!(d.caption_count(), 0);
        assert!(d.captions_for("n01").is_empty());
    }
}
