//! Content-addressed stage artifacts.
//!
//! ```text
//! <root>/<cache_key>/output.jsonl
//! <root>/<cache_key>/meta.json        {"cache_key","kind","output_digest"}
//! <root>/datasets/<digest>/dataset.manifest.json
//! ```
//!
//! Entries are published by renaming a finished temporary directory, so
//! readers never see partial output and the first writer of a key wins.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::corpus::{read_canonical, write_canonical, Dataset, DatasetManifest};
use crate::digest::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Meta {
    cache_key: String,
    kind: String,
    output_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lookup {
    Hit(String),
    Miss,
    /// Present but the output no longer matches its recorded digest.
    Corrupt(String),
}

pub struct Store {
    root: PathBuf,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Store {
        path: path.to_path_buf(),
        source,
    }
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join(".tmp")).map_err(io_err(&root))?;
        Ok(Store {
            root,
            key_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_dir(&self, key: &str) -> PathBuf {
        self.root.join(key)
    }

    /// Serializes work on one key within this process.
    pub(crate) fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        self.key_locks
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(key.to_owned())
            .or_default()
            .clone()
    }

    pub fn lookup(&self, key: &str) -> Lookup {
        let dir = self.entry_dir(key);
        let meta: Meta = match fs::read_to_string(dir.join("meta.json"))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
        {
            Some(m) => m,
            None if dir.exists() => return Lookup::Corrupt("unreadable meta.json".into()),
            None => return Lookup::Miss,
        };
        match fs::read(dir.join("output.jsonl")) {
            Ok(bytes) if sha256_hex(&bytes) == meta.output_digest && meta.cache_key == key => {
                match String::from_utf8(bytes) {
                    Ok(s) => Lookup::Hit(s),
                    Err(_) => Lookup::Corrupt("output is not UTF-8".into()),
                }
            }
            Ok(_) => Lookup::Corrupt("output digest mismatch".into()),
            Err(_) => Lookup::Corrupt("missing output.jsonl".into()),
        }
    }

    pub fn publish(&self, key: &str, kind: &str, output: &str) -> Result<()> {
        let tmp = self.root.join(".tmp").join(uuid::Uuid::new_v4().simple().to_string());
        fs::create_dir_all(&tmp).map_err(io_err(&tmp))?;
        let meta = Meta {
            cache_key: key.to_owned(),
            kind: kind.to_owned(),
            output_digest: sha256_hex(output.as_bytes()),
        };
        fs::write(tmp.join("output.jsonl"), output).map_err(io_err(&tmp))?;
        fs::write(
            tmp.join("meta.json"),
            serde_json::to_string_pretty(&meta).expect("meta serializes"),
        )
        .map_err(io_err(&tmp))?;
        let dest = self.entry_dir(key);
        if fs::rename(&tmp, &dest).is_err() {
            // someone else published first; their content is identical
            let _ = fs::remove_dir_all(&tmp);
            if !dest.exists() {
                return Err(PipelineError::Store {
                    path: dest,
                    source: std::io::Error::other("could not publish stage output"),
                });
            }
        }
        Ok(())
    }

    /// Removes an entry so it can be recomputed.
    pub fn evict(&self, key: &str) -> Result<()> {
        let dir = self.entry_dir(key);
        match fs::remove_dir_all(&dir) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(io_err(&dir)(e)),
        }
    }

    /// Writes `dataset` in canonical form under `datasets/<digest>/` unless
    /// an intact copy exists, and returns its manifest path.
    pub fn ensure_dataset(&self, dataset: &Dataset) -> Result<(PathBuf, DatasetManifest)> {
        let digest = dataset.content_digest();
        let dir = self.root.join("datasets").join(&digest);
        let manifest_path = dir.join("dataset.manifest.json");
        let lock = self.key_lock(&format!("dataset:{digest}"));
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        if manifest_path.exists() {
            if let Ok(existing) = read_canonical(&manifest_path) {
                if existing.content_digest() == digest {
                    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
                    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| PipelineError::Output {
                        key: digest.clone(),
                        message: e.to_string(),
                    })?;
                    return Ok((manifest_path, manifest));
                }
            }
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let (manifest, path) = write_canonical(dataset, &dir, "dataset")?;
        Ok((path, manifest))
    }
}
