//! Readers for the external dataset layouts.
//!
//! * `multi30k`: an index file with one image name per line plus any number of
//!   parallel caption files; line `i` of every caption file describes image `i`.
//! * `coco_json`: `{"images": [{"id", "file_name"}], "annotations": [{"image_id", "caption"}]}`.
//! * `xm3600`: JSON lines `{"image_id", "caption", "language"}`; only records in
//!   the requested language are kept, so references may be ragged.
//! * `image_list`: one image path per line, no captions.
//! * `canonical`: a manifest written by [`write_canonical`](super::write_canonical).

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use super::{read_canonical, CaptionRecord, CorpusError, Dataset, DatasetBuilder, ImageRef, Origin, Result, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Multi30k,
    CocoJson,
    Xm3600,
    ImageList,
    Canonical,
}

impl FromStr for Format {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi30k" => Ok(Format::Multi30k),
            "coco_json" => Ok(Format::CocoJson),
            "xm3600" => Ok(Format::Xm3600),
            "image_list" => Ok(Format::ImageList),
            "canonical" => Ok(Format::Canonical),
            other => Err(CorpusError::Usage(format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub format: Format,
    pub language: String,
    pub name: String,
    pub split: Split,
}

impl IngestOptions {
    pub fn new(format: Format, language: impl Into<String>) -> Self {
        let (name, split) = match format {
            Format::Multi30k => ("multi30k", Split::Train),
            Format::CocoJson => ("mscoco", Split::Additional),
            Format::Xm3600 => ("xm3600", Split::Test),
            Format::ImageList => ("images", Split::Additional),
            Format::Canonical => ("canonical", Split::Train),
        };
        IngestOptions {
            format,
            language: language.into(),
            name: name.into(),
            split,
        }
    }

    pub fn named(mut self, name: impl Into<String>, split: Split) -> Self {
        self.name = name.into();
        self.split = split;
        self
    }
}

/// Ingests a single file group (e.g. one Multi30k split).
pub fn ingest(paths: &[PathBuf], opts: &IngestOptions) -> Result<Dataset> {
    ingest_groups(&[paths.to_vec()], opts)
}

/// Ingests several file groups into one dataset, e.g. Multi30k train and
/// validation combined. Groups are parsed concurrently; image ids must be
/// unique across groups.
pub fn ingest_groups(groups: &[Vec<PathBuf>], opts: &IngestOptions) -> Result<Dataset> {
    if groups.is_empty() || groups.iter().any(Vec::is_empty) {
        return Err(CorpusError::Usage("no input paths given".into()));
    }
    if opts.format == Format::Canonical {
        if groups.len() != 1 || groups[0].len() != 1 {
            return Err(CorpusError::Usage(
                "canonical ingestion takes a single manifest path".into(),
            ));
        }
        return read_canonical(&groups[0][0]);
    }
    if !super::is_valid_language(&opts.language) {
        return Err(CorpusError::InvalidLanguage(opts.language.clone()));
    }

    let parsed: Vec<Result<Parsed>> = std::thread::scope(|scope| {
        let handles: Vec<_> = groups
            .iter()
            .map(|group| scope.spawn(move || parse_group(group, opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("ingestion worker panicked"))
            .collect()
    });

    let mut builder = Dataset::builder(opts.name.clone(), opts.split);
    for group in parsed {
        let group = group?;
        for image in group.images {
            builder.add_image(image)?;
        }
        for record in group.captions {
            builder.add_caption(record)?;
        }
    }
    Ok(builder.build())
}

struct Parsed {
    images: Vec<ImageRef>,
    captions: Vec<CaptionRecord>,
}

fn parse_group(paths: &[PathBuf], opts: &IngestOptions) -> Result<Parsed> {
    match opts.format {
        Format::Multi30k => parse_multi30k(paths, opts),
        Format::CocoJson => paths.iter().map(|p| parse_coco(p, opts)).try_fold(
            Parsed {
                images: vec![],
                captions: vec![],
            },
            |mut acc, p| {
                let p = p?;
                acc.images.extend(p.images);
                acc.captions.extend(p.captions);
                Ok(acc)
            },
        ),
        Format::Xm3600 => parse_xm3600(paths, opts),
        Format::ImageList => parse_image_list(paths, opts),
        Format::Canonical => unreachable!("handled by caller"),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let mut lines: Vec<String> = text
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l).to_owned())
        .collect();
    if lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    Ok(lines)
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_multi30k(paths: &[PathBuf], opts: &IngestOptions) -> Result<Parsed> {
    let (index_path, caption_paths) = paths.split_first().expect("non-empty group");
    let index = read_lines(index_path)?;
    let mut images = Vec::with_capacity(index.len());
    for (i, name) in index.iter().enumerate() {
        let name = name.trim();
        if name.is_empty() {
            return Err(parse_error(index_path, i + 1, "empty image name"));
        }
        images.push(ImageRef {
            id: name.to_owned(),
            uri: name.to_owned(),
            dataset: opts.name.clone(),
        });
    }

    let mut captions = Vec::with_capacity(index.len() * caption_paths.len());
    for path in caption_paths {
        let lines = read_lines(path)?;
        if lines.len() != images.len() {
            return Err(parse_error(
                path,
                lines.len().min(images.len()) + 1,
                format!("caption file has {} lines, index has {}", lines.len(), images.len()),
            ));
        }
        for (i, (line, image)) in lines.iter().zip(&images).enumerate() {
            if line.trim().is_empty() {
                return Err(parse_error(path, i + 1, "empty caption"));
            }
            captions.push(CaptionRecord::new(
                image.id.clone(),
                line.trim(),
                opts.language.clone(),
                Origin::Human,
            ));
        }
    }
    Ok(Parsed { images, captions })
}

#[derive(Deserialize)]
struct CocoDoc {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: serde_json::Value,
    file_name: String,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: serde_json::Value,
    caption: String,
}

fn coco_id(value: &serde_json::Value) -> Option<String> {
    match value {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_coco(path: &Path, opts: &IngestOptions) -> Result<Parsed> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let doc: CocoDoc =
        serde_json::from_str(&text).map_err(|e| parse_error(path, e.line(), format!("column {}: {e}", e.column())))?;
    let mut builder = DatasetBuilder::scratch();
    let mut images = Vec::with_capacity(doc.images.len());
    for image in doc.images {
        let id = coco_id(&image.id).ok_or_else(|| parse_error(path, 0, "image id must be a string or number"))?;
        let image = ImageRef {
            id,
            uri: image.file_name,
            dataset: opts.name.clone(),
        };
        builder.add_image(image.clone())?;
        images.push(image);
    }
    let mut captions = Vec::with_capacity(doc.annotations.len());
    for ann in doc.annotations {
        let id = coco_id(&ann.image_id)
            .ok_or_else(|| parse_error(path, 0, "annotation image_id must be a string or number"))?;
        if !builder.contains(&id) {
            return Err(CorpusError::UnknownImage(id));
        }
        captions.push(CaptionRecord::new(
            id,
            ann.caption.trim(),
            opts.language.clone(),
            Origin::Human,
        ));
    }
    Ok(Parsed { images, captions })
}

#[derive(Deserialize)]
struct Xm3600Record {
    image_id: String,
    caption: String,
    language: String,
}

fn parse_xm3600(paths: &[PathBuf], opts: &IngestOptions) -> Result<Parsed> {
    let mut builder = DatasetBuilder::scratch();
    let mut images = Vec::new();
    let mut captions = Vec::new();
    for path in paths {
        for (i, line) in read_lines(path)?.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Xm3600Record = serde_json::from_str(line).map_err(|e| parse_error(path, i + 1, e.to_string()))?;
            if rec.language != opts.language {
                continue;
            }
            if !builder.contains(&rec.image_id) {
                let image = ImageRef {
                    id: rec.image_id.clone(),
                    uri: rec.image_id.clone(),
                    dataset: opts.name.clone(),
                };
                builder.add_image(image.clone())?;
                images.push(image);
            }
            captions.push(CaptionRecord::new(
                rec.image_id,
                rec.caption.trim(),
                rec.language,
                Origin::Human,
            ));
        }
    }
    Ok(Parsed { images, captions })
}

fn parse_image_list(paths: &[PathBuf], opts: &IngestOptions) -> Result<Parsed> {
    let mut images = Vec::new();
    for path in paths {
        for line in read_lines(path)? {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            images.push(ImageRef {
                id: line.to_owned(),
                uri: line.to_owned(),
                dataset: opts.name.clone(),
            });
        }
    }
    Ok(Parsed {
        images,
        captions: Vec::new(),
    })
}

impl DatasetBuilder {
    /// Builder used only for id bookkeeping while parsing.
    fn scratch() -> DatasetBuilder {
        Dataset::builder("", Split::Train)
    }
}
