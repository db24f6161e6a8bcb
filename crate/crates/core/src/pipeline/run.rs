use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::plan::{DatasetInput, PlanInputs, StageKind, StagePlan, VariantName, VariantSpec};
use super::store::{Lookup, Store};
use super::{plan_variant, ExperimentConfig, PipelineError, Result};
use crate::backends::{Backend, BackendKind, CheckpointRef};
use crate::corpus::{
    merge, read_canonical, sample_one_caption_per_image, sample_subset, CaptionRecord, Dataset, DatasetManifest,
    Origin, Split,
};
use crate::metrics::{bert_score, bleu4, cider_d, tokenize, BertScoreOptions, EvalItem, EvalSet, MetricKind};

/// One client per configured backend role.
pub struct Backends {
    map: BTreeMap<BackendKind, Backend>,
}

impl Backends {
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        let mut map = BTreeMap::new();
        for ep in &config.backends {
            map.insert(ep.kind, Backend::new(ep.clone())?);
        }
        Ok(Backends { map })
    }

    pub fn get(&self, kind: BackendKind) -> Result<&Backend> {
        self.map
            .get(&kind)
            .ok_or_else(|| PipelineError::Config(format!("no {kind} backend configured")))
    }

    pub fn identities(&self) -> BTreeMap<BackendKind, String> {
        self.map.iter().map(|(k, b)| (*k, b.identity().to_owned())).collect()
    }

    pub fn check_health(&self) -> Result<()> {
        for backend in self.map.values() {
            backend.health()?;
        }
        Ok(())
    }
}

/// A loaded experiment: datasets in memory, backend clients and the store.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub base: Dataset,
    pub additional: Dataset,
    pub additional_plus: Option<Dataset>,
    pub test: Dataset,
    pub backends: Backends,
    pub store: Store,
}

impl Experiment {
    pub fn open(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let base = read_canonical(&config.base_dataset)?;
        let additional = read_canonical(&config.additional_dataset)?;
        let additional_plus = match &config.extension_dataset {
            Some(p) => Some(merge(&additional, &read_canonical(p)?)?),
            None => None,
        };
        let test = read_canonical(&config.test_dataset)?;
        let backends = Backends::from_config(&config)?;
        let store = Store::open(&config.store)?;
        Ok(Experiment {
            config,
            base,
            additional,
            additional_plus,
            test,
            backends,
            store,
        })
    }

    pub fn inputs<'a>(&'a self, base: &'a Dataset) -> PlanInputs<'a> {
        PlanInputs {
            config: &self.config,
            base,
            additional: &self.additional,
            additional_plus: self.additional_plus.as_ref(),
            test: &self.test,
            identities: self.backends.identities(),
        }
    }

    /// The base set, or its seeded `n`-image subset.
    pub fn base_subset(&self, n: Option<usize>, seed: u64) -> Result<Dataset> {
        Ok(match n {
            Some(n) => sample_subset(&self.base, n, seed)?,
            None => self.base.clone(),
        })
    }

    /// Variants named in the config, or every variant the datasets support.
    pub fn variants(&self) -> Result<Vec<(VariantName, bool)>> {
        if let Some(labels) = &self.config.variants {
            return labels.iter().map(|l| VariantSpec::parse_label(l)).collect();
        }
        let has_human_en = self
            .additional
            .captions()
            .any(|c| c.origin == Origin::Human && c.language.starts_with("en"));
        let mut out: Vec<(VariantName, bool)> = VariantName::ALL
            .into_iter()
            .filter(|v| *v != VariantName::HTran || has_human_en)
            .map(|v| (v, false))
            .collect();
        if self.additional_plus.is_some() {
            out.extend([VariantName::MTran, VariantName::Own, VariantName::Re].map(|v| (v, true)));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Hit,
    Miss,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub kind: StageKind,
    pub cache_key: String,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Display label, e.g. `re+IN`.
    pub variant: String,
    pub name: VariantName,
    pub plus_imagenet: bool,
    /// Base images trained on.
    pub n: usize,
    pub seed: u64,
    pub plan_digest: String,
    pub stages: Vec<StageOutcome>,
    /// Metric name to score: BLEU and BERTScore on 0-100, CIDEr raw.
    pub scores: BTreeMap<String, f64>,
}

impl RunRecord {
    pub fn all_cache_hits(&self) -> bool {
        self.stages.iter().all(|s| s.status == StageStatus::Hit)
    }

    pub fn failed(&self) -> bool {
        self.stages
            .iter()
            .any(|s| matches!(s.status, StageStatus::Failed | StageStatus::Skipped))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetOutput {
    manifest_uri: String,
    manifest: DatasetManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScoreOutput {
    metric: String,
    score: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Output {
    Checkpoint(CheckpointRef),
    Captions(Vec<CaptionRecord>),
    Dataset(DatasetOutput),
    Scores(Vec<ScoreOutput>),
}

fn to_line<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string(v).expect("stage output serializes");
    s.push('\n');
    s
}

impl Output {
    fn to_jsonl(&self) -> String {
        match self {
            Output::Checkpoint(c) => to_line(c),
            Output::Captions(rs) => rs.iter().map(to_line).collect(),
            Output::Dataset(d) => to_line(d),
            Output::Scores(ss) => ss.iter().map(to_line).collect(),
        }
    }

    fn parse(kind: StageKind, text: &str) -> std::result::Result<Output, String> {
        fn lines<T: for<'de> Deserialize<'de>>(text: &str) -> std::result::Result<Vec<T>, String> {
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
                .collect()
        }
        fn one<T: for<'de> Deserialize<'de>>(text: &str) -> std::result::Result<T, String> {
            let mut v: Vec<T> = lines(text)?;
            if v.len() != 1 {
                return Err(format!("expected one line, found {}", v.len()));
            }
            Ok(v.remove(0))
        }
        Ok(match kind {
            StageKind::TrainBase | StageKind::ContinueTrain => Output::Checkpoint(one(text)?),
            StageKind::Assemble => Output::Dataset(one(text)?),
            StageKind::Evaluate => Output::Scores(lines(text)?),
            _ => Output::Captions(lines(text)?),
        })
    }

    fn checkpoint(&self) -> Result<&CheckpointRef> {
        match self {
            Output::Checkpoint(c) => Ok(c),
            _ => Err(PipelineError::Plan("stage expected a checkpoint input".into())),
        }
    }

    fn captions(&self) -> Result<&[CaptionRecord]> {
        match self {
            Output::Captions(c) => Ok(c),
            _ => Err(PipelineError::Plan("stage expected a caption input".into())),
        }
    }

    fn dataset(&self) -> Result<&DatasetOutput> {
        match self {
            Output::Dataset(d) => Ok(d),
            _ => Err(PipelineError::Plan("stage expected a dataset input".into())),
        }
    }
}

struct Ctx<'a> {
    exp: &'a Experiment,
    inputs: PlanInputs<'a>,
    seed: u64,
}

impl Ctx<'_> {
    fn dataset(&self, input: Option<DatasetInput>) -> Result<&Dataset> {
        input
            .and_then(|i| self.inputs.dataset(i))
            .ok_or_else(|| PipelineError::Plan("stage has no input dataset".into()))
    }

    fn language(&self) -> &str {
        &self.exp.config.target_language
    }
}

fn translate(ctx: &Ctx<'_>, records: &[CaptionRecord], src: &str, tgt: &str) -> Result<Vec<CaptionRecord>> {
    let translator = ctx.exp.backends.get(BackendKind::Translator)?;
    let texts: Vec<String> = records.iter().map(|r| r.text.clone()).collect();
    let out = translator.translate_batch(src, tgt, &texts)?;
    Ok(records
        .iter()
        .zip(out)
        .map(|(r, text)| {
            CaptionRecord::new(&r.image_id, text, tgt, Origin::Translated).with_provenance(translator.identity())
        })
        .collect())
}

fn execute(ctx: &Ctx<'_>, plan: &StagePlan, index: usize, deps: &[&Output]) -> Result<Output> {
    let stage = &plan.stages[index];
    let backends = &ctx.exp.backends;
    let param = |k: &str| stage.params.get(k).cloned().unwrap_or_default();
    match stage.kind {
        StageKind::TrainBase => {
            let (uri, manifest) = ctx.exp.store.ensure_dataset(ctx.dataset(stage.input)?)?;
            let epochs = ctx.exp.config.base_epochs;
            let ck =
                backends
                    .get(BackendKind::Trainer)?
                    .train(&uri.to_string_lossy(), &manifest, None, epochs, ctx.seed)?;
            Ok(Output::Checkpoint(ck))
        }
        StageKind::Generate => {
            let ck = deps[0].checkpoint()?;
            let images = ctx.dataset(stage.input)?.images();
            let captions = backends
                .get(BackendKind::Captioner)?
                .caption_batch(ck, images, ctx.seed, ctx.language())?;
            Ok(Output::Captions(captions))
        }
        StageKind::GenerateEnglish => {
            let reformulator = backends.get(BackendKind::Reformulator)?;
            let dataset = ctx.dataset(stage.input)?;
            let items: Vec<_> = dataset.images().iter().map(|i| (i.clone(), String::new())).collect();
            let texts = reformulator.reformulate_batch(&items)?;
            Ok(Output::Captions(
                dataset
                    .images()
                    .iter()
                    .zip(texts)
                    .map(|(img, t)| {
                        CaptionRecord::new(&img.id, t, "en", Origin::Model).with_provenance(reformulator.identity())
                    })
                    .collect(),
            ))
        }
        StageKind::SampleHuman => {
            let dataset = ctx.dataset(stage.input)?;
            let mut b = Dataset::builder(dataset.name(), dataset.split());
            for (img, caps) in dataset.entries() {
                let english: Vec<_> = caps
                    .iter()
                    .filter(|c| c.origin == Origin::Human && c.language.starts_with("en"))
                    .collect();
                if english.is_empty() {
                    continue;
                }
                b.add_image(img.clone())?;
                for c in english {
                    b.add_caption(c.clone())?;
                }
            }
            let sampled = sample_one_caption_per_image(&b.build(), ctx.seed)?;
            Ok(Output::Captions(sampled.captions().cloned().collect()))
        }
        StageKind::TranslateToEn | StageKind::TranslateBack | StageKind::TranslateToTarget => Ok(Output::Captions(
            translate(ctx, deps[0].captions()?, &param("src"), &param("tgt"))?,
        )),
        StageKind::Reformulate => {
            let reformulator = backends.get(BackendKind::Reformulator)?;
            let dataset = ctx.dataset(stage.input)?;
            let records = deps[0].captions()?;
            let items = records
                .iter()
                .map(|r| {
                    dataset
                        .image(&r.image_id)
                        .map(|img| (img.clone(), r.text.clone()))
                        .ok_or_else(|| {
                            PipelineError::Corpus(crate::corpus::CorpusError::UnknownImage(r.image_id.clone()))
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            let texts = reformulator.reformulate_batch(&items)?;
            Ok(Output::Captions(
                records
                    .iter()
                    .zip(texts)
                    .map(|(r, t)| {
                        CaptionRecord::new(&r.image_id, t, "en", Origin::Reformulated)
                            .with_provenance(reformulator.identity())
                    })
                    .collect(),
            ))
        }
        StageKind::Assemble => {
            let source = ctx.dataset(stage.input)?;
            let records = deps[0].captions()?;
            let mut b = Dataset::builder(format!("assembled-{}", param("variant")), Split::Additional);
            for r in records {
                if !b.contains(&r.image_id) {
                    let img = source
                        .image(&r.image_id)
                        .ok_or_else(|| crate::corpus::CorpusError::UnknownImage(r.image_id.clone()))?;
                    b.add_image(img.clone())?;
                }
                b.add_caption(r.clone())?;
            }
            let (path, manifest) = ctx.exp.store.ensure_dataset(&b.build())?;
            Ok(Output::Dataset(DatasetOutput {
                manifest_uri: path.to_string_lossy().into_owned(),
                manifest,
            }))
        }
        StageKind::ContinueTrain => {
            let parent = deps[0].checkpoint()?;
            let data = deps[1].dataset()?;
            let ck = backends.get(BackendKind::Trainer)?.train(
                &data.manifest_uri,
                &data.manifest,
                Some(parent),
                ctx.exp.config.continue_epochs,
                ctx.seed,
            )?;
            Ok(Output::Checkpoint(ck))
        }
        StageKind::Evaluate => {
            let ck = deps[0].checkpoint()?;
            let test = ctx.dataset(stage.input)?;
            let candidates =
                backends
                    .get(BackendKind::Captioner)?
                    .caption_batch(ck, test.images(), ctx.seed, ctx.language())?;
            let items = test
                .images()
                .iter()
                .zip(&candidates)
                .map(|(img, cand)| EvalItem {
                    image_id: img.id.clone(),
                    candidate: tokenize(&cand.text),
                    references: test.captions_for(&img.id).iter().map(|c| tokenize(&c.text)).collect(),
                })
                .collect();
            let set = EvalSet::new(items)?;
            let mut scores = Vec::new();
            for name in param("metrics").split(',').filter(|s| !s.is_empty()) {
                let kind =
                    MetricKind::parse(name).ok_or_else(|| PipelineError::Config(format!("unknown metric `{name}`")))?;
                let score = match kind {
                    MetricKind::Bleu4 => bleu4(&set)?.score,
                    MetricKind::CiderD => cider_d(&set)?.score,
                    MetricKind::BertScore => {
                        let embedder = backends.get(BackendKind::Embedder)?;
                        bert_score(&set, embedder, &set.references(), BertScoreOptions::default())?.score()
                    }
                };
                scores.push(ScoreOutput {
                    metric: kind.as_str().to_owned(),
                    score,
                });
            }
            Ok(Output::Scores(scores))
        }
    }
}

/// Loads the stage from the store or computes and publishes it.
/// Stage index, its result and wall time in milliseconds.
type StageResult = (usize, Result<(Output, bool)>, u64);

fn run_stage(ctx: &Ctx<'_>, plan: &StagePlan, index: usize, deps: &[&Output]) -> Result<(Output, bool)> {
    let stage = &plan.stages[index];
    let store = &ctx.exp.store;
    let lock = store.key_lock(&stage.cache_key);
    let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
    match store.lookup(&stage.cache_key) {
        Lookup::Hit(text) => match Output::parse(stage.kind, &text) {
            Ok(out) => return Ok((out, true)),
            Err(message) => {
                log::warn!(
                    "stage {} ({}) unreadable, recomputing: {message}",
                    stage.kind,
                    stage.cache_key
                );
                store.evict(&stage.cache_key)?;
            }
        },
        Lookup::Corrupt(reason) => {
            log::warn!(
                "stage {} ({}) corrupt, recomputing: {reason}",
                stage.kind,
                stage.cache_key
            );
            store.evict(&stage.cache_key)?;
        }
        Lookup::Miss => {}
    }
    let out = execute(ctx, plan, index, deps)?;
    store.publish(&stage.cache_key, stage.kind.as_str(), &out.to_jsonl())?;
    Ok((out, false))
}

/// Executes a plan in dependency waves. A failed stage skips its
/// dependents; independent stages still run.
pub fn run(plan: &StagePlan, exp: &Experiment, base: &Dataset) -> RunRecord {
    let ctx = Ctx {
        exp,
        inputs: exp.inputs(base),
        seed: plan.variant.seed,
    };
    let n = plan.stages.len();
    let mut outputs: Vec<Option<Output>> = vec![None; n];
    let mut outcomes: Vec<Option<StageOutcome>> = vec![None; n];
    let workers = exp.config.workers.max(1);
    loop {
        let mut ready = Vec::new();
        for i in 0..n {
            if outcomes[i].is_some() {
                continue;
            }
            let deps = &plan.stages[i].deps;
            if deps.iter().any(|&d| {
                outcomes[d]
                    .as_ref()
                    .is_some_and(|o| matches!(o.status, StageStatus::Failed | StageStatus::Skipped))
            }) {
                outcomes[i] = Some(StageOutcome {
                    kind: plan.stages[i].kind,
                    cache_key: plan.stages[i].cache_key.clone(),
                    status: StageStatus::Skipped,
                    error: None,
                });
                continue;
            }
            if deps.iter().all(|&d| outputs[d].is_some()) {
                ready.push(i);
            }
        }
        if ready.is_empty() {
            if outcomes.iter().all(Option::is_some) {
                break;
            }
            // skipped stages may have unblocked more skips
            continue;
        }
        for wave in ready.chunks(workers) {
            let results: Vec<StageResult> = std::thread::scope(|scope| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|&i| {
                        let ctx = &ctx;
                        let outputs = &outputs;
                        scope.spawn(move || {
                            let started = Instant::now();
                            let deps: Vec<&Output> = plan.stages[i]
                                .deps
                                .iter()
                                .map(|&d| outputs[d].as_ref().expect("dependency finished"))
                                .collect();
                            let r = run_stage(ctx, plan, i, &deps);
                            (i, r, started.elapsed().as_millis() as u64)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("stage worker panicked"))
                    .collect()
            });
            for (i, result, ms) in results {
                let stage = &plan.stages[i];
                log::debug!("stage {} took {ms} ms", stage.kind);
                let (status, error) = match result {
                    Ok((out, hit)) => {
                        outputs[i] = Some(out);
                        (if hit { StageStatus::Hit } else { StageStatus::Miss }, None)
                    }
                    Err(e) => {
                        log::error!("stage {} failed: {e}", stage.kind);
                        (StageStatus::Failed, Some(e.to_string()))
                    }
                };
                outcomes[i] = Some(StageOutcome {
                    kind: stage.kind,
                    cache_key: stage.cache_key.clone(),
                    status,
                    error,
                });
            }
        }
    }
    let mut scores = BTreeMap::new();
    for out in outputs.iter().flatten() {
        if let Output::Scores(ss) = out {
            for s in ss {
                scores.insert(s.metric.clone(), s.score);
            }
        }
    }
    RunRecord {
        variant: plan.variant.label(),
        name: plan.variant.name,
        plus_imagenet: plan.variant.plus_imagenet,
        n: plan.n,
        seed: plan.variant.seed,
        plan_digest: plan.digest(),
        stages: outcomes
            .into_iter()
            .map(|o| o.expect("every stage has an outcome"))
            .collect(),
        scores,
    }
}

/// Runs every (subset size, seed, variant) cell. Without subset sizes the
/// full base set is used. Records come back ordered by size, seed and
/// variant.
pub fn sweep(exp: &Experiment) -> Result<Vec<RunRecord>> {
    exp.backends.check_health()?;
    let sizes: Vec<Option<usize>> = match &exp.config.subset_sizes {
        Some(s) => s.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let variants = exp.variants()?;
    let mut bases: Vec<Dataset> = Vec::new();
    let mut cells: Vec<(usize, StagePlan)> = Vec::new();
    for size in &sizes {
        for &seed in &exp.config.seeds {
            bases.push(exp.base_subset(*size, seed)?);
            let bi = bases.len() - 1;
            for &(name, plus) in &variants {
                let plan = plan_variant(&VariantSpec::new(name, plus, seed), &exp.inputs(&bases[bi]))?;
                cells.push((bi, plan));
            }
        }
    }
    log::info!("sweep: {} cells", cells.len());
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<RunRecord>>> = Mutex::new(vec![None; cells.len()]);
    std::thread::scope(|scope| {
        for _ in 0..exp.config.workers.min(cells.len()).max(1) {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap_or_else(|e| e.into_inner());
                    if *n >= cells.len() {
                        return;
                    }
                    *n += 1;
                    *n - 1
                };
                let (bi, plan) = &cells[i];
                let record = run(plan, exp, &bases[*bi]);
                results.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(record);
            });
        }
    });
    let mut records: Vec<RunRecord> = results
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect();
    records.sort_by_key(|r| (r.n, r.seed, r.plus_imagenet, r.name));
    Ok(records)
}
