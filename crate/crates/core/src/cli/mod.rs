//! Command-line entry point.
//!
//! Stdout is machine-readable (JSON or JSONL) unless `--pretty` is given;
//! logs go to stderr. Exit codes: 0 success, 1 user error, 2 backend or I/O
//! failure. Every failure ends with one `error[E_...]: message` line on
//! stderr.

use std::collections::HashSet;
use std::ffi::OsString;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{self, AnalysisError, LengthUnit, PairLabels, ReformulationPair};
use crate::annotate::{self, AnnotateError, AnnotateOptions, AnnotationStore};
use crate::backends::mock::{write_toy_world, ToyWorldOptions};
use crate::backends::server::{serve_forever, MockOptions};
use crate::backends::{Backend, BackendEndpoint, BackendError, BackendKind};
use crate::corpus::{self, read_canonical, write_canonical, CorpusError, Format, IngestOptions, Split};
use crate::humaneval::{self, HumanEvalError, Judgment, Pooling};
use crate::metrics::{bert_score, bleu4, cider_d, fmt1, BertScoreOptions, EvalSet, MetricKind, MetricsError};
use crate::pipeline::report::{self, ReferenceRow, ReportOptions};
use crate::pipeline::{self, Experiment, ExperimentConfig, PipelineError, RunRecord, VariantSpec};

#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub exit: i32,
    pub message: String,
}

impl CliError {
    fn user(code: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            exit: 1,
            message: message.into(),
        }
    }

    fn system(code: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            exit: 2,
            message: message.into(),
        }
    }

    fn new(code: &'static str, user: bool, message: impl ToString) -> Self {
        if user {
            CliError::user(code, message.to_string())
        } else {
            CliError::system(code, message.to_string())
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        let code = if matches!(e, CorpusError::Io { .. }) {
            "E_IO"
        } else {
            "E_CORPUS"
        };
        CliError::new(code, e.is_user_error(), e)
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::new("E_BACKEND", e.is_user_error(), e)
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        let user = !matches!(e, MetricsError::Embedder(_));
        CliError::new("E_METRICS", user, e)
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Corpus(e) => e.into(),
            PipelineError::Backend(e) => e.into(),
            PipelineError::Metrics(e) => e.into(),
            PipelineError::Config(_) => CliError::user("E_CONFIG", e.to_string()),
            PipelineError::Plan(_) => CliError::user("E_PLAN", e.to_string()),
            PipelineError::Report(_) => CliError::user("E_REPORT", e.to_string()),
            PipelineError::Store { .. } | PipelineError::Output { .. } => CliError::system("E_STORE", e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::user("E_ANALYSIS", e.to_string())
    }
}

impl From<HumanEvalError> for CliError {
    fn from(e: HumanEvalError) -> Self {
        CliError::user("E_HUMANEVAL", e.to_string())
    }
}

impl From<AnnotateError> for CliError {
    fn from(e: AnnotateError) -> Self {
        CliError::new("E_ANNOTATE", e.is_user_error(), e)
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "capref",
    version,
    about = "Caption refinement experiments, metrics and annotation"
)]
pub struct Cli {
    /// Render tables and indented JSON instead of machine-readable output.
    #[arg(long, global = true)]
    pretty: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a dataset into canonical form.
    Ingest(IngestArgs),
    /// Print the stage graph of one variant.
    Plan(PlanArgs),
    /// Run one variant.
    Run(RunArgs),
    /// Run every configured (size, seed, variant) cell.
    Sweep(SweepArgs),
    /// Score predictions against references.
    Eval(EvalArgs),
    /// Reformulation statistics, change tallies and caption pairing.
    Analyze(AnalyzeArgs),
    /// Aggregate pairwise human judgments.
    Humaneval(HumanevalArgs),
    /// Serve the annotation API.
    Serve(ServeArgs),
    /// Build result tables from run records.
    Report(ReportArgs),
    /// Serve the deterministic mock backends.
    MockServe(MockServeArgs),
    /// Write the toy datasets and a matching experiment config.
    MockData(MockDataArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FormatArg {
    Multi30k,
    #[value(alias = "coco_json")]
    CocoJson,
    Xm3600,
    #[value(alias = "image_list")]
    ImageList,
    Canonical,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Multi30k => Format::Multi30k,
            FormatArg::CocoJson => Format::CocoJson,
            FormatArg::Xm3600 => Format::Xm3600,
            FormatArg::ImageList => Format::ImageList,
            FormatArg::Canonical => Format::Canonical,
        }
    }
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long, value_enum)]
    format: FormatArg,
    #[arg(long, num_args = 1.., required = true)]
    paths: Vec<PathBuf>,
    #[arg(long, default_value = "en")]
    language: String,
    #[arg(long)]
    name: Option<String>,
    /// train, val, test or additional.
    #[arg(long)]
    split: Option<String>,
    /// Output directory for the canonical files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Experiment config, JSON or TOML.
    #[arg(long)]
    config: PathBuf,
    /// Caps pipeline parallelism.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Variant label, e.g. `re` or `own+IN`.
    #[arg(long)]
    variant: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train on a seeded subset of this many base images.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    plan: PlanArgs,
    /// Where to write the run record; defaults to `<store>/runs/`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Overrides the configured seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Write every run record here as JSONL.
    #[arg(long)]
    records: Option<PathBuf>,
    #[command(flatten)]
    table: TableArgs,
}

#[derive(Args, Debug)]
struct TableArgs {
    #[arg(long, value_enum, default_value_t = TableFormat::Markdown)]
    format: TableFormat,
    /// Show CIDEr multiplied by 100.
    #[arg(long)]
    cider_percent: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum TableFormat {
    Markdown,
    Html,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predictions: JSONL `{image_id, text}` or a canonical manifest.
    #[arg(long)]
    pred: PathBuf,
    /// References, same formats.
    #[arg(long)]
    refs: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "bleu4,cider_d")]
    metrics: Vec<String>,
    /// Embedder endpoint for bert_score.
    #[arg(long, env = "CAPREF_BACKEND_EMBEDDER")]
    embedder: Option<String>,
    #[arg(long, default_value = "embedder")]
    embedder_identity: String,
    /// Rescale BERTScore against this baseline value.
    #[arg(long)]
    bert_baseline: Option<f64>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(subcommand)]
    command: AnalyzeCommand,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum UnitArg {
    Characters,
    Words,
}

#[derive(Subcommand, Debug)]
enum AnalyzeCommand {
    /// Unchanged fraction, mean word edit distance and lengths.
    Stats {
        /// JSONL `{image_id, original, reformulated, language}`.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, value_enum, default_value_t = UnitArg::Characters)]
        unit: UnitArg,
    },
    /// Element by change-type table.
    Tally {
        /// JSONL `{pair_id, labels: [{element, kind}]}`.
        #[arg(long)]
        labels: PathBuf,
        /// Restrict to pair ids present in this pairs file (by image_id).
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Best-matching candidate for each stylized caption.
    Pair {
        /// One stylized caption per line.
        #[arg(long)]
        stylized: PathBuf,
        /// One candidate caption per line.
        #[arg(long)]
        candidates: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PoolingArg {
    All,
    #[value(alias = "item_majority")]
    ItemMajority,
}

#[derive(Args, Debug)]
struct HumanevalArgs {
    /// JSONL `{item_id, axis, annotator_id, choice}`.
    #[arg(long)]
    judgments: PathBuf,
    #[arg(long, value_enum, default_value_t = PoolingArg::All)]
    pooling: PoolingArg,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, env = "CAPREF_ANNOTATE_STORE")]
    store: PathBuf,
    /// Directory with the web UI bundle.
    #[arg(long)]
    ui: Option<PathBuf>,
    #[arg(long, default_value_t = 600)]
    lease_secs: u64,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Run records, JSONL as written by `sweep --records`.
    #[arg(long)]
    records: PathBuf,
    #[arg(long, value_enum, default_value_t = TableKind::Grid)]
    table: TableKind,
    /// Reference systems for the comparison table, JSON list of
    /// `{name, scores}`.
    #[arg(long)]
    references: Option<PathBuf>,
    /// Columns of the comparison table.
    #[arg(long, value_delimiter = ',', default_value = "bleu4,cider_d")]
    metrics: Vec<String>,
    /// Our row in the comparison table; defaults to the best variant.
    #[arg(long)]
    ours: Option<String>,
    #[command(flatten)]
    table_args: TableArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum TableKind {
    Grid,
    Comparison,
}

#[derive(Args, Debug)]
struct MockServeArgs {
    #[arg(long, default_value_t = 8090)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value_t = crate::backends::mock::MOCK_LAMBDA)]
    lambda: f64,
}

#[derive(Args, Debug)]
struct MockDataArgs {
    /// Directory for the canonical datasets and `experiment.json`.
    #[arg(long)]
    out: PathBuf,
    /// Mock server URL written into the experiment config.
    #[arg(long, default_value = "http://127.0.0.1:8090")]
    backend_url: String,
    #[arg(long, default_value_t = 1000)]
    base: u64,
    #[arg(long, default_value_t = 600)]
    additional: u64,
    #[arg(long, default_value_t = 400)]
    extension: u64,
    #[arg(long, default_value_t = 500)]
    test: u64,
}

struct Io<'a> {
    out: &'a mut dyn Write,
    pretty: bool,
}

impl Io<'_> {
    fn line(&mut self, s: &str) -> CliResult {
        writeln!(self.out, "{s}").map_err(|e| CliError::system("E_IO", format!("stdout: {e}")))
    }

    fn raw(&mut self, s: &str) -> CliResult {
        self.out
            .write_all(s.as_bytes())
            .map_err(|e| CliError::system("E_IO", format!("stdout: {e}")))
    }

    fn json<T: Serialize>(&mut self, v: &T) -> CliResult {
        let text = if self.pretty {
            serde_json::to_string_pretty(v)
        } else {
            serde_json::to_string(v)
        }
        .expect("value serializes");
        self.line(&text)
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{}", e.render());
                return 0;
            }
            let _ = write!(err, "{}", e.render());
            let _ = writeln!(err, "error[E_USAGE]: invalid arguments");
            return 1;
        }
    };
    let mut io = Io {
        out,
        pretty: cli.pretty,
    };
    match dispatch(cli.command, &mut io) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error[{}]: {}", e.code, e.message.replace('\n', " "));
            e.exit
        }
    }
}

fn dispatch(command: Command, io: &mut Io<'_>) -> CliResult {
    match command {
        Command::Ingest(a) => ingest(a, io),
        Command::Plan(a) => plan(a, io),
        Command::Run(a) => run(a, io),
        Command::Sweep(a) => sweep(a, io),
        Command::Eval(a) => eval(a, io),
        Command::Analyze(a) => analyze(a, io),
        Command::Humaneval(a) => human(a, io),
        Command::Serve(a) => serve(a),
        Command::Report(a) => report_cmd(a, io),
        Command::MockServe(a) => serve_forever(SocketAddr::new(a.host, a.port), MockOptions { lambda: a.lambda })
            .map_err(|e| CliError::system("E_IO", format!("mock server: {e}"))),
        Command::MockData(a) => mock_data(a, io),
    }
}

fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| {
        let user = e.kind() == std::io::ErrorKind::NotFound;
        CliError::new("E_IO", user, format!("{}: {e}", path.display()))
    })
}

fn write_file(path: &Path, text: &str) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::system("E_IO", format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::system("E_IO", format!("{}: {e}", path.display())))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    let text = read_file(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::user("E_INPUT", format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    Ok(read_file(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_owned)
        .collect())
}

fn ingest(a: IngestArgs, io: &mut Io<'_>) -> CliResult {
    let mut opts = IngestOptions::new(a.format.into(), a.language);
    if a.name.is_some() || a.split.is_some() {
        let split: Split = match &a.split {
            Some(s) => s.parse()?,
            None => opts.split,
        };
        let name = a.name.unwrap_or_else(|| opts.name.clone());
        opts = opts.named(name, split);
    }
    let dataset = corpus::ingest(&a.paths, &opts)?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::system("E_IO", format!("{}: {e}", a.out.display())))?;
    let (manifest, path) = write_canonical(&dataset, &a.out, dataset.name())?;
    if io.pretty {
        io.line(&format!(
            "{} ({}): {} images, {} captions -> {}",
            manifest.name,
            manifest.split,
            manifest.image_count,
            manifest.caption_count,
            path.display()
        ))
    } else {
        io.json(&serde_json::json!({
            "name": manifest.name,
            "split": manifest.split,
            "image_count": manifest.image_count,
            "caption_count": manifest.caption_count,
            "content_digest": manifest.content_digest,
            "manifest": path,
        }))
    }
}

fn open_experiment(a: &ExperimentArgs) -> CliResult<Experiment> {
    let mut config = ExperimentConfig::load(&a.config)?;
    config.apply_url_overrides(|k| std::env::var(k).ok());
    if let Some(w) = a.workers {
        config.workers = w;
    }
    Ok(Experiment::open(config)?)
}

fn plan_for(a: &PlanArgs, exp: &Experiment) -> CliResult<(pipeline::StagePlan, corpus::Dataset)> {
    let (name, plus) = VariantSpec::parse_label(&a.variant)?;
    let base = exp.base_subset(a.n, a.seed)?;
    let plan = pipeline::plan_variant(&VariantSpec::new(name, plus, a.seed), &exp.inputs(&base))?;
    Ok((plan, base))
}

fn plan(a: PlanArgs, io: &mut Io<'_>) -> CliResult {
    let exp = open_experiment(&a.experiment)?;
    let (plan, _) = plan_for(&a, &exp)?;
    let mut out = serde_json::to_value(&plan).expect("plan serializes");
    out["digest"] = plan.digest().into();
    io.json(&out)
}

fn run(a: RunArgs, io: &mut Io<'_>) -> CliResult {
    let exp = open_experiment(&a.plan.experiment)?;
    let (plan, base) = plan_for(&a.plan, &exp)?;
    exp.backends.check_health()?;
    let record = pipeline::run(&plan, &exp, &base);
    let path = a.out.unwrap_or_else(|| {
        exp.store
            .root()
            .join("runs")
            .join(format!("{}-n{}-s{}.json", record.variant, record.n, record.seed))
    });
    write_file(
        &path,
        &(serde_json::to_string_pretty(&record).expect("record serializes") + "\n"),
    )?;
    io.json(&record)?;
    failed_stage(&record)
}

fn failed_stage(record: &RunRecord) -> CliResult {
    match record.stages.iter().find(|s| s.error.is_some()) {
        Some(s) => Err(CliError::system(
            "E_STAGE",
            format!(
                "{} (seed {}): stage {} failed: {}",
                record.variant,
                record.seed,
                s.kind,
                s.error.as_deref().unwrap_or_default()
            ),
        )),
        None => Ok(()),
    }
}

fn report_options(t: &TableArgs) -> ReportOptions {
    ReportOptions {
        cider_percent: t.cider_percent,
    }
}

fn sweep(a: SweepArgs, io: &mut Io<'_>) -> CliResult {
    let mut exp = open_experiment(&a.experiment)?;
    if let Some(seeds) = a.seeds {
        exp.config.seeds = seeds;
        exp.config.validate()?;
    }
    let records = pipeline::sweep(&exp)?;
    if let Some(path) = &a.records {
        let text: String = records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect();
        write_file(path, &text)?;
    }
    if let Some(r) = records.iter().find(|r| r.failed()) {
        return failed_stage(r);
    }
    if io.pretty {
        let opts = report_options(&a.table);
        let text = match a.table.format {
            TableFormat::Markdown => report::render_grid_text(&records, opts)?,
            TableFormat::Html => report::render_grid_html(&records, opts)?,
        };
        io.raw(&text)
    } else {
        io.raw(&report::machine_report(&records)?)
    }
}

#[derive(Deserialize)]
struct TextLine {
    image_id: String,
    text: String,
}

fn read_captions(path: &Path) -> CliResult<Vec<(String, String)>> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if name.ends_with(".manifest.json") {
        let ds = read_canonical(path)?;
        return Ok(ds.captions().map(|c| (c.image_id.clone(), c.text.clone())).collect());
    }
    Ok(read_jsonl::<TextLine>(path)?
        .into_iter()
        .map(|l| (l.image_id, l.text))
        .collect())
}

fn eval(a: EvalArgs, io: &mut Io<'_>) -> CliResult {
    let metrics = a
        .metrics
        .iter()
        .map(|m| MetricKind::parse(m).ok_or_else(|| CliError::user("E_USAGE", format!("unknown metric `{m}`"))))
        .collect::<CliResult<Vec<_>>>()?;
    let mut preds = std::collections::BTreeMap::new();
    for (id, text) in read_captions(&a.pred)? {
        if preds.insert(id.clone(), text).is_some() {
            return Err(CliError::user(
                "E_INPUT",
                format!("more than one prediction for `{id}`"),
            ));
        }
    }
    let mut refs: std::collections::BTreeMap<String, Vec<String>> = std::collections::BTreeMap::new();
    for (id, text) in read_captions(&a.refs)? {
        refs.entry(id).or_default().push(text);
    }
    let mut items = Vec::with_capacity(refs.len());
    for (id, rs) in refs {
        let Some(p) = preds.remove(&id) else {
            return Err(CliError::user("E_INPUT", format!("no prediction for `{id}`")));
        };
        items.push((id, p, rs));
    }
    if let Some(id) = preds.keys().next() {
        return Err(CliError::user(
            "E_INPUT",
            format!("prediction for `{id}` has no references"),
        ));
    }
    let set = EvalSet::from_texts(items.iter().map(|(id, p, rs)| (id.as_str(), p.as_str(), rs)))?;
    for m in metrics {
        let score = match m {
            MetricKind::Bleu4 => bleu4(&set)?.score,
            MetricKind::CiderD => cider_d(&set)?.score,
            MetricKind::BertScore => {
                let url = a
                    .embedder
                    .clone()
                    .ok_or_else(|| CliError::user("E_USAGE", "bert_score needs --embedder"))?;
                let embedder = Backend::new(BackendEndpoint::new(
                    BackendKind::Embedder,
                    url,
                    a.embedder_identity.clone(),
                ))?;
                bert_score(
                    &set,
                    &embedder,
                    &set.references(),
                    BertScoreOptions {
                        baseline: a.bert_baseline,
                        ..BertScoreOptions::default()
                    },
                )?
                .score()
            }
        };
        if io.pretty {
            io.line(&format!("{}\t{}", m.label(), fmt1(score)))?;
        } else {
            io.json(&serde_json::json!({ "metric": m.as_str(), "score": score }))?;
        }
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs, io: &mut Io<'_>) -> CliResult {
    match a.command {
        AnalyzeCommand::Stats { pairs, unit } => {
            let pairs: Vec<ReformulationPair> = read_jsonl(&pairs)?;
            let unit = match unit {
                UnitArg::Characters => LengthUnit::Characters,
                UnitArg::Words => LengthUnit::Words,
            };
            let stats = analysis::reformulation_stats(&pairs, unit)?;
            if io.pretty {
                io.line(&format!("pairs\t{}", stats.total))?;
                io.line(&format!(
                    "unchanged\t{} ({:.1}%)",
                    stats.unchanged,
                    stats.unchanged_fraction * 100.0
                ))?;
                io.line(&format!("mean word edit distance\t{:.2}", stats.mean_edit_distance))?;
                io.line(&format!("mean length before\t{:.2}", stats.mean_len_before))?;
                io.line(&format!("mean length after\t{:.2}", stats.mean_len_after))
            } else {
                io.json(&stats)
            }
        }
        AnalyzeCommand::Tally { labels, pairs } => {
            let labels: Vec<PairLabels> = read_jsonl(&labels)?;
            let known: Option<HashSet<String>> = match pairs {
                Some(p) => Some(
                    read_jsonl::<ReformulationPair>(&p)?
                        .into_iter()
                        .map(|p| p.image_id)
                        .collect(),
                ),
                None => None,
            };
            let table = analysis::change_tally(&labels, known.as_ref())?;
            if io.pretty {
                io.raw(&table.render())
            } else {
                io.json(&table)
            }
        }
        AnalyzeCommand::Pair { stylized, candidates } => {
            let stylized = read_lines(&stylized)?;
            let candidates = read_lines(&candidates)?;
            if candidates.is_empty() {
                return Err(CliError::user("E_INPUT", "no candidate captions"));
            }
            for (i, s) in stylized.iter().enumerate() {
                let m = analysis::pair_stylized_to_original(s, &candidates);
                if io.pretty {
                    io.line(&format!(
                        "{i}\t{}",
                        m.map(|m| m.to_string()).unwrap_or_else(|| "-".into())
                    ))?;
                } else {
                    io.json(&serde_json::json!({ "stylized": i, "candidate": m }))?;
                }
            }
            Ok(())
        }
    }
}

fn human(a: HumanevalArgs, io: &mut Io<'_>) -> CliResult {
    let judgments: Vec<Judgment> = read_jsonl(&a.judgments)?;
    let pooling = match a.pooling {
        PoolingArg::All => Pooling::AllJudgments,
        PoolingArg::ItemMajority => Pooling::ItemMajority,
    };
    let results = humaneval::aggregate(&judgments, pooling)?;
    if io.pretty {
        io.line("axis\tn\tA\tB\ttie\tp\tsignificant\tfleiss")?;
    }
    for r in results {
        let axis: Vec<Judgment> = judgments.iter().filter(|j| j.axis == r.axis).cloned().collect();
        let table = humaneval::choice_table(&axis);
        let raters = table.first().map(|row| row.iter().sum()).unwrap_or(0);
        let kappa = humaneval::fleiss_kappa(&table, raters).ok();
        if io.pretty {
            io.line(&format!(
                "{}\t{}\t{:.1}%\t{:.1}%\t{:.1}%\t{:.4}\t{}\t{}",
                r.axis,
                r.n,
                r.prop_a * 100.0,
                r.prop_b * 100.0,
                r.prop_tie * 100.0,
                r.p_value,
                if r.significant { "yes" } else { "no" },
                kappa.map(|k| format!("{k:.3}")).unwrap_or_else(|| "-".into())
            ))?;
        } else {
            let mut v = serde_json::to_value(&r).expect("result serializes");
            v["fleiss_kappa"] = serde_json::json!(kappa);
            io.json(&v)?;
        }
    }
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult {
    let store = AnnotationStore::open(
        &a.store,
        AnnotateOptions {
            lease_ms: a.lease_secs * 1000,
            ..AnnotateOptions::default()
        },
    )?;
    annotate::serve(SocketAddr::new(a.host, a.port), Arc::new(store), a.ui)
        .map_err(|e| CliError::system("E_IO", format!("annotation service: {e}")))
}

fn report_cmd(a: ReportArgs, io: &mut Io<'_>) -> CliResult {
    let records: Vec<RunRecord> = read_jsonl(&a.records)?;
    if !io.pretty {
        return io.raw(&report::machine_report(&records)?);
    }
    let opts = report_options(&a.table_args);
    let html = a.table_args.format == TableFormat::Html;
    let text = match a.table {
        TableKind::Grid if html => report::render_grid_html(&records, opts)?,
        TableKind::Grid => report::render_grid_text(&records, opts)?,
        TableKind::Comparison => {
            let references: Vec<ReferenceRow> = match &a.references {
                Some(p) => serde_json::from_str(&read_file(p)?)
                    .map_err(|e| CliError::user("E_INPUT", format!("{}: {e}", p.display())))?,
                None => Vec::new(),
            };
            let metrics = a
                .metrics
                .iter()
                .map(|m| MetricKind::parse(m).ok_or_else(|| CliError::user("E_USAGE", format!("unknown metric `{m}`"))))
                .collect::<CliResult<Vec<_>>>()?;
            if html {
                report::render_comparison_html(&records, &references, &metrics, a.ours.as_deref(), opts)?
            } else {
                report::render_comparison_text(&records, &references, &metrics, a.ours.as_deref(), opts)?
            }
        }
    };
    io.raw(&text)
}

fn mock_data(a: MockDataArgs, io: &mut Io<'_>) -> CliResult {
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::system("E_IO", format!("{}: {e}", a.out.display())))?;
    let world = write_toy_world(
        &a.out,
        &ToyWorldOptions {
            base_images: a.base,
            additional_images: a.additional,
            extension_images: a.extension,
            test_images: a.test,
        },
    )?;
    let rel = |p: &Path| p.file_name().map(PathBuf::from).unwrap_or_else(|| p.to_path_buf());
    let config = ExperimentConfig {
        target_language: "de".into(),
        base_dataset: rel(&world.base),
        additional_dataset: rel(&world.additional),
        extension_dataset: Some(rel(&world.extension)),
        test_dataset: rel(&world.test),
        backends: [
            BackendKind::Captioner,
            BackendKind::Translator,
            BackendKind::Reformulator,
            BackendKind::Trainer,
        ]
        .iter()
        .map(|&k| BackendEndpoint::new(k, &a.backend_url, format!("mock-{k}@1")))
        .collect(),
        base_epochs: 10,
        continue_epochs: 1,
        seeds: vec![0, 1, 2],
        subset_sizes: Some(
            [50, 200, 800]
                .into_iter()
                .filter(|&n| n <= a.base as usize)
                .collect::<Vec<_>>(),
        )
        .filter(|s: &Vec<usize>| !s.is_empty()),
        variants: None,
        metrics: None,
        store: PathBuf::from("store"),
        workers: 4,
    };
    let path = a.out.join("experiment.json");
    write_file(
        &path,
        &(serde_json::to_string_pretty(&config).expect("config serializes") + "\n"),
    )?;
    io.json(&serde_json::json!({
        "base": world.base,
        "additional": world.additional,
        "extension": world.extension,
        "test": world.test,
        "config": path,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_cli(
            std::iter::once("capref").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn help_everywhere() {
        for sub in [
            "ingest",
            "plan",
            "run",
            "sweep",
            "eval",
            "analyze",
            "humaneval",
            "serve",
            "report",
            "mock-serve",
            "mock-data",
        ] {
            let (code, out, _) = call(&[sub, "--help"]);
            assert_eq!(code, 0, "{sub}");
            assert!(out.contains("Usage"), "{sub}");
        }
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let (code, _, err) = call(&["eval", "--bogus"]);
        assert_eq!(code, 1);
        assert!(err.lines().last().unwrap().starts_with("error[E_USAGE]"));
    }

    #[test]
    fn missing_input_is_user_error() {
        let (code, _, err) = call(&[
            "ingest",
            "--format",
            "coco_json",
            "--paths",
            "/nonexistent/missing.json",
        ]);
        assert_eq!(code, 1, "{err}");
        assert!(err.starts_with("error[E_IO]"), "{err}");
    }
}
