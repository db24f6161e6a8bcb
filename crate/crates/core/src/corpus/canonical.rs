//! Line-delimited canonical records plus a manifest document.
//!
//! ```text
//! <stem>.records.jsonl   {"image_id","text","language","origin","provenance"} per caption
//! <stem>.images.jsonl    {"id","uri","dataset"} per image (caption-less images live only here)
//! <stem>.manifest.json   {"name","split","image_count","caption_count","content_digest","records","images"}
//! ```
//!
//! The digest hashes the sorted image lines and the sorted record lines, so it
//! does not depend on insertion order.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CaptionRecord, CorpusError, Dataset, ImageRef, Result, Split};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub split: Split,
    pub image_count: usize,
    pub caption_count: usize,
    pub content_digest: String,
    /// Records file, relative to the manifest's directory unless absolute.
    pub records: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<String>,
}

impl DatasetManifest {
    pub fn for_dataset(dataset: &Dataset, records: String, images: Option<String>) -> Self {
        DatasetManifest {
            name: dataset.name().to_owned(),
            split: dataset.split(),
            image_count: dataset.image_count(),
            caption_count: dataset.caption_count(),
            content_digest: dataset.content_digest(),
            records,
            images,
        }
    }
}

pub(crate) fn record_line(record: &CaptionRecord) -> String {
    serde_json::to_string(record).expect("caption record serializes")
}

pub(crate) fn image_line(image: &ImageRef) -> String {
    serde_json::to_string(image).expect("image ref serializes")
}

pub(crate) fn content_digest(dataset: &Dataset) -> String {
    let mut images: Vec<String> = dataset.images().iter().map(image_line).collect();
    let mut records: Vec<String> = dataset.captions().map(record_line).collect();
    images.sort_unstable();
    records.sort_unstable();
    let mut hasher = Sha256::new();
    for line in &images {
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
    }
    hasher.update(b"\n");
    for line in &records {
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// Writes `dir/<stem>.{records,images}.jsonl` and `dir/<stem>.manifest.json`
/// and returns the manifest together with its path.
pub fn write_canonical(dataset: &Dataset, dir: &Path, stem: &str) -> Result<(DatasetManifest, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    let records_name = format!("{stem}.records.jsonl");
    let images_name = format!("{stem}.images.jsonl");

    let mut records = String::new();
    for record in dataset.captions() {
        records.push_str(&record_line(record));
        records.push('\n');
    }
    let mut images = String::new();
    for image in dataset.images() {
        images.push_str(&image_line(image));
        images.push('\n');
    }
    write_atomic(&dir.join(&records_name), records.as_bytes())?;
    write_atomic(&dir.join(&images_name), images.as_bytes())?;

    let manifest = DatasetManifest::for_dataset(dataset, records_name, Some(images_name));
    let manifest_path = dir.join(format!("{stem}.manifest.json"));
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&manifest_path, body.as_bytes())?;
    Ok((manifest, manifest_path))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", uuid::Uuid::new_v4().simple()));
    let mut file = fs::File::create(&tmp).map_err(|e| CorpusError::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| CorpusError::io(&tmp, e))?;
    file.sync_all().map_err(|e| CorpusError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CorpusError::io(path, e))
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Loads a dataset from its manifest and verifies counts and digest.
///
/// Without an images file, images are derived from the records (uri = id).
pub fn read_canonical(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| CorpusError::io(manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| CorpusError::Parse {
        path: manifest_path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let records: Vec<CaptionRecord> = read_jsonl(&resolve(base, &manifest.records))?;

    let mut builder = Dataset::builder(manifest.name.clone(), manifest.split);
    match &manifest.images {
        Some(images) => {
            let images: Vec<ImageRef> = read_jsonl(&resolve(base, images))?;
            for image in images {
                builder.add_image(image)?;
            }
        }
        None => {
            for record in &records {
                if !builder.contains(&record.image_id) {
                    builder.add_image(ImageRef {
                        id: record.image_id.clone(),
                        uri: record.image_id.clone(),
                        dataset: manifest.name.clone(),
                    })?;
                }
            }
        }
    }
    for record in records {
        builder.add_caption(record)?;
    }
    let dataset = builder.build();

    if dataset.image_count() != manifest.image_count || dataset.caption_count() != manifest.caption_count {
        return Err(CorpusError::ManifestMismatch(format!(
            "manifest declares {} images / {} captions, records hold {} / {}",
            manifest.image_count,
            manifest.caption_count,
            dataset.image_count(),
            dataset.caption_count()
        )));
    }
    let digest = dataset.content_digest();
    if digest != manifest.content_digest {
        return Err(CorpusError::ManifestMismatch(format!(
            "content digest {digest} does not match manifest {}",
            manifest.content_digest
        )));
    }
    Ok(dataset)
}
