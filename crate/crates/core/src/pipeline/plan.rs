use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, PipelineError, Result};
use crate::backends::BackendKind;
use crate::corpus::{Dataset, Origin};
use crate::digest::sha256_parts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Base,
    HTran,
    MTran,
    Own,
    Re,
}

impl VariantName {
    pub const ALL: [VariantName; 5] = [
        VariantName::Base,
        VariantName::HTran,
        VariantName::MTran,
        VariantName::Own,
        VariantName::Re,
    ];

    pub fn label(self) -> &'static str {
        match self {
            VariantName::Base => "base",
            VariantName::HTran => "h-tran",
            VariantName::MTran => "m-tran",
            VariantName::Own => "own",
            VariantName::Re => "re",
        }
    }
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VariantSpec {
    pub name: VariantName,
    pub plus_imagenet: bool,
    pub seed: u64,
}

impl VariantSpec {
    pub fn new(name: VariantName, plus_imagenet: bool, seed: u64) -> Self {
        VariantSpec {
            name,
            plus_imagenet,
            seed,
        }
    }

    /// `re`, `m-tran+IN`, ...
    pub fn label(&self) -> String {
        label(self.name, self.plus_imagenet)
    }

    /// Parses a label such as `re+IN` or `h_tran` into a name and the
    /// extension flag.
    pub fn parse_label(s: &str) -> Result<(VariantName, bool)> {
        let (name, plus) = match s.strip_suffix("+IN").or_else(|| s.strip_suffix("+in")) {
            Some(n) => (n, true),
            None => (s, false),
        };
        let name = VariantName::from_str(name)?;
        Ok((name, plus))
    }
}

pub(crate) fn label(name: VariantName, plus_imagenet: bool) -> String {
    if plus_imagenet {
        format!("{}+IN", name.label())
    } else {
        name.label().to_owned()
    }
}

impl FromStr for VariantName {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('_', "-");
        VariantName::ALL
            .into_iter()
            .find(|v| v.label() == norm)
            .ok_or_else(|| PipelineError::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    TrainBase,
    Generate,
    GenerateEnglish,
    SampleHuman,
    TranslateToEn,
    Reformulate,
    TranslateBack,
    TranslateToTarget,
    Assemble,
    ContinueTrain,
    Evaluate,
}

impl StageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::TrainBase => "train_base",
            StageKind::Generate => "generate",
            StageKind::GenerateEnglish => "generate_english",
            StageKind::SampleHuman => "sample_human",
            StageKind::TranslateToEn => "translate_to_en",
            StageKind::Reformulate => "reformulate",
            StageKind::TranslateBack => "translate_back",
            StageKind::TranslateToTarget => "translate_to_target",
            StageKind::Assemble => "assemble",
            StageKind::ContinueTrain => "continue_train",
            StageKind::Evaluate => "evaluate",
        }
    }

    fn backend(self) -> Option<BackendKind> {
        match self {
            StageKind::TrainBase | StageKind::ContinueTrain => Some(BackendKind::Trainer),
            StageKind::Generate | StageKind::Evaluate => Some(BackendKind::Captioner),
            StageKind::GenerateEnglish | StageKind::Reformulate => Some(BackendKind::Reformulator),
            StageKind::TranslateToEn | StageKind::TranslateBack | StageKind::TranslateToTarget => {
                Some(BackendKind::Translator)
            }
            StageKind::SampleHuman | StageKind::Assemble => None,
        }
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which of the experiment's datasets a stage reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetInput {
    Base,
    Additional,
    /// Additional set merged with the image-only extension.
    AdditionalPlus,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub kind: StageKind,
    /// Indices of upstream stages in the same plan.
    pub deps: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<DatasetInput>,
    /// Content digests of the datasets read directly.
    pub input_digests: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    pub params: BTreeMap<String, String>,
    pub cache_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    pub variant: VariantSpec,
    /// Number of base images the plan trains on.
    pub n: usize,
    /// In execution order; every dependency precedes its dependents.
    pub stages: Vec<Stage>,
}

impl StagePlan {
    pub fn kinds(&self) -> Vec<StageKind> {
        self.stages.iter().map(|s| s.kind).collect()
    }

    pub fn digest(&self) -> String {
        sha256_parts(self.stages.iter().map(|s| s.cache_key.as_str()))
    }
}

/// Everything a plan depends on. The datasets are the ones actually used,
/// so for a sweep cell `base` is already the subset.
pub struct PlanInputs<'a> {
    pub config: &'a ExperimentConfig,
    pub base: &'a Dataset,
    pub additional: &'a Dataset,
    pub additional_plus: Option<&'a Dataset>,
    pub test: &'a Dataset,
    pub identities: BTreeMap<BackendKind, String>,
}

impl PlanInputs<'_> {
    pub(crate) fn dataset(&self, input: DatasetInput) -> Option<&Dataset> {
        match input {
            DatasetInput::Base => Some(self.base),
            DatasetInput::Additional => Some(self.additional),
            DatasetInput::AdditionalPlus => self.additional_plus,
            DatasetInput::Test => Some(self.test),
        }
    }
}

struct Builder<'a, 'b> {
    inputs: &'b PlanInputs<'a>,
    seed: u64,
    stages: Vec<Stage>,
}

impl Builder<'_, '_> {
    fn push(
        &mut self,
        kind: StageKind,
        deps: &[usize],
        input: Option<DatasetInput>,
        params: &[(&str, String)],
    ) -> Result<usize> {
        let backend = match kind.backend() {
            Some(b) => Some(
                self.inputs
                    .identities
                    .get(&b)
                    .cloned()
                    .ok_or_else(|| PipelineError::Plan(format!("stage {kind} needs a {b} backend")))?,
            ),
            None => None,
        };
        let mut params: BTreeMap<String, String> = params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        if kind == StageKind::Evaluate {
            if let Some(embedder) = self.inputs.identities.get(&BackendKind::Embedder) {
                params.insert("embedder".into(), embedder.clone());
            }
        }
        let input_digests = match input {
            Some(i) => vec![self
                .inputs
                .dataset(i)
                .ok_or_else(|| PipelineError::Plan("no extension dataset configured".into()))?
                .content_digest()],
            None => Vec::new(),
        };
        let mut parts: Vec<String> = vec!["stage".into(), kind.as_str().into(), self.seed.to_string()];
        parts.push(backend.clone().unwrap_or_default());
        for (k, v) in &params {
            parts.push(format!("{k}={v}"));
        }
        for &d in deps {
            parts.push(format!("dep:{}", self.stages[d].cache_key));
        }
        for d in &input_digests {
            parts.push(format!("in:{d}"));
        }
        let cache_key = sha256_parts(&parts);
        self.stages.push(Stage {
            kind,
            deps: deps.to_vec(),
            input,
            input_digests,
            backend,
            params,
            cache_key,
        });
        Ok(self.stages.len() - 1)
    }
}

fn has_human_english(d: &Dataset) -> bool {
    d.captions()
        .any(|c| c.origin == Origin::Human && c.language.split('-').next() == Some("en"))
}

/// Expands a variant into its stage DAG. Pure: equal inputs give equal plans.
pub fn plan_variant(spec: &VariantSpec, inputs: &PlanInputs<'_>) -> Result<StagePlan> {
    let config = inputs.config;
    let lang = config.target_language.clone();
    if spec.plus_imagenet {
        if matches!(spec.name, VariantName::Base | VariantName::HTran) {
            return Err(PipelineError::Plan(format!(
                "{} does not use the extension images",
                spec.name
            )));
        }
        if inputs.additional_plus.is_none() {
            return Err(PipelineError::Plan(format!(
                "{} needs an extension dataset",
                spec.label()
            )));
        }
    }
    if spec.name == VariantName::HTran && !has_human_english(inputs.additional) {
        return Err(PipelineError::Plan(
            "h-tran needs human English captions in the additional set".into(),
        ));
    }
    let source = if spec.plus_imagenet {
        DatasetInput::AdditionalPlus
    } else {
        DatasetInput::Additional
    };
    let metrics: Vec<&str> = config.metric_kinds()?.iter().map(|m| m.as_str()).collect();
    let metrics = metrics.join(",");

    let mut b = Builder {
        inputs,
        seed: spec.seed,
        stages: Vec::new(),
    };
    let train = b.push(
        StageKind::TrainBase,
        &[],
        Some(DatasetInput::Base),
        &[("epochs", config.base_epochs.to_string())],
    )?;
    let last_captions = match spec.name {
        VariantName::Base => None,
        VariantName::Own => Some(b.push(
            StageKind::Generate,
            &[train],
            Some(source),
            &[("language", lang.clone())],
        )?),
        VariantName::Re => {
            let g = b.push(
                StageKind::Generate,
                &[train],
                Some(source),
                &[("language", lang.clone())],
            )?;
            let to_en = b.push(
                StageKind::TranslateToEn,
                &[g],
                None,
                &[("src", lang.clone()), ("tgt", "en".into())],
            )?;
            let re = b.push(StageKind::Reformulate, &[to_en], Some(source), &[])?;
            Some(b.push(
                StageKind::TranslateBack,
                &[re],
                None,
                &[("src", "en".into()), ("tgt", lang.clone())],
            )?)
        }
        VariantName::MTran => {
            let g = b.push(StageKind::GenerateEnglish, &[], Some(source), &[])?;
            Some(b.push(
                StageKind::TranslateToTarget,
                &[g],
                None,
                &[("src", "en".into()), ("tgt", lang.clone())],
            )?)
        }
        VariantName::HTran => {
            let s = b.push(StageKind::SampleHuman, &[], Some(DatasetInput::Additional), &[])?;
            Some(b.push(
                StageKind::TranslateToTarget,
                &[s],
                None,
                &[("src", "en".into()), ("tgt", lang.clone())],
            )?)
        }
    };
    let checkpoint = match last_captions {
        None => train,
        Some(c) => {
            let assembled = b.push(StageKind::Assemble, &[c], Some(source), &[("variant", spec.label())])?;
            b.push(
                StageKind::ContinueTrain,
                &[train, assembled],
                None,
                &[("epochs", config.continue_epochs.to_string())],
            )?
        }
    };
    b.push(
        StageKind::Evaluate,
        &[checkpoint],
        Some(DatasetInput::Test),
        &[("language", lang), ("metrics", metrics)],
    )?;
    Ok(StagePlan {
        variant: *spec,
        n: inputs.base.image_count(),
        stages: b.stages,
    })
}
