use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::backends::{BackendEndpoint, BackendKind};
use crate::corpus::is_valid_language;
use crate::metrics::MetricKind;

fn default_base_epochs() -> u32 {
    10
}
fn default_continue_epochs() -> u32 {
    1
}
fn default_store() -> PathBuf {
    PathBuf::from("store")
}
fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// One experiment document, JSON or TOML. Relative paths are resolved
/// against the document's directory by [`ExperimentConfig::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target_language: String,
    pub base_dataset: PathBuf,
    pub additional_dataset: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extension_dataset: Option<PathBuf>,
    pub test_dataset: PathBuf,
    pub backends: Vec<BackendEndpoint>,
    #[serde(default = "default_base_epochs")]
    pub base_epochs: u32,
    #[serde(default = "default_continue_epochs")]
    pub continue_epochs: u32,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_sizes: Option<Vec<usize>>,
    /// Variant labels to run, e.g. `re` or `re+IN`. Defaults to every
    /// variant the datasets allow.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variants: Option<Vec<String>>,
    /// Metric names; BERTScore is included by default when an embedder is
    /// configured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Vec<String>>,
    #[serde(default = "default_store")]
    pub store: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut config: ExperimentConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => {
                toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
            }
            _ => serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?,
        };
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.base_dataset);
        fix(&mut self.additional_dataset);
        fix(&mut self.test_dataset);
        fix(&mut self.store);
        if let Some(p) = self.extension_dataset.as_mut() {
            fix(p);
        }
    }

    /// Replaces backend URLs from `CAPREF_BACKEND_<KIND>`-style lookups.
    pub fn apply_url_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        for ep in &mut self.backends {
            let var = format!("CAPREF_BACKEND_{}", ep.kind.as_str().to_ascii_uppercase());
            if let Some(url) = lookup(&var) {
                ep.url = url;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !is_valid_language(&self.target_language) {
            return Err(PipelineError::Config(format!(
                "invalid target language `{}`",
                self.target_language
            )));
        }
        if self.seeds.is_empty() {
            return Err(PipelineError::Config("at least one seed is required".into()));
        }
        if self.base_epochs == 0 || self.continue_epochs == 0 {
            return Err(PipelineError::Config("epochs must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(PipelineError::Config("workers must be at least 1".into()));
        }
        if let Some(sizes) = &self.subset_sizes {
            if sizes.is_empty() || sizes.contains(&0) {
                return Err(PipelineError::Config("subset sizes must be positive".into()));
            }
        }
        let mut kinds = BTreeSet::new();
        for ep in &self.backends {
            ep.validate()?;
            if !kinds.insert(ep.kind) {
                return Err(PipelineError::Config(format!("backend `{}` configured twice", ep.kind)));
            }
        }
        self.metric_kinds()?;
        Ok(())
    }

    pub fn endpoint(&self, kind: BackendKind) -> Option<&BackendEndpoint> {
        self.backends.iter().find(|e| e.kind == kind)
    }

    pub fn metric_kinds(&self) -> Result<Vec<MetricKind>> {
        match &self.metrics {
            Some(names) => {
                let mut kinds = names
                    .iter()
                    .map(|n| MetricKind::parse(n).ok_or_else(|| PipelineError::Config(format!("unknown metric `{n}`"))))
                    .collect::<Result<Vec<_>>>()?;
                kinds.sort();
                kinds.dedup();
                if kinds.is_empty() {
                    return Err(PipelineError::Config("metric list is empty".into()));
                }
                Ok(kinds)
            }
            None => {
                let mut kinds = vec![MetricKind::Bleu4, MetricKind::CiderD];
                if self.endpoint(BackendKind::Embedder).is_some() {
                    kinds.push(MetricKind::BertScore);
                }
                Ok(kinds)
            }
        }
    }
}
