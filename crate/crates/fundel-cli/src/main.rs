//! Pipeline driver: train, link, and evaluate from one configuration file.
//!
//! Each stage reads its inputs from the paths in the config, writes its
//! artifact under the artifacts root (`paths.artifacts`, overridable with
//! the `FUNDEL_ARTIFACTS` environment variable), and records provenance —
//! the effective config hash, the seed, and content digests of everything
//! it read and wrote — under `<artifacts>/provenance/<command>.json`.
//! Stages are idempotent: an existing output is left untouched unless
//! `--force` is given. With the same config and seed, every stage produces
//! byte-identical artifacts and reports.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest as _, Sha256};

use fundel::corpus::{load_corpus, Span};
use fundel::eval::{benchmark, ed_metrics, el_metrics, gold_labeled, gold_spans, md_metrics};
use fundel::linker::{load_links, save_links};
use fundel::mention::{finetune_md, pretrain_tapt};
use fundel::{
    train_biencoder, train_selector, BiEncoder, Document, EncoderCheckpoint,
    EntityEmbeddings, EntityLabel, GoldAnnotation, LabeledSpan, LinkedMention, Linker, MdModel,
    MetricsReport, PipelineConfig, Registry, SelectorModel, SurfaceFormTable, Vocab,
};

/// Artifact layout under the artifacts root.
const ENCODER_DIR: &str = "encoder";
const MD_DIR: &str = "md";
const STATS_FILE: &str = "stats.json";
const BIENCODER_DIR: &str = "biencoder";
const EMBEDDINGS_DIR: &str = "embeddings";
const SELECTOR_FILE: &str = "selector.json";

#[derive(Parser)]
#[command(name = "fundel", version, about = "Entity linking for funding organizations")]
struct Cli {
    /// Pipeline configuration (TOML). Omitted fields — or the whole file —
    /// fall back to the reference training schedule.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed; overrides the config and propagates to every stage.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Rebuild outputs that already exist.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Adapt the base encoder to the domain with masked-token pretraining.
    TrainMlm,
    /// Fine-tune the IOB mention detector.
    TrainMd,
    /// Count surface-form statistics over the training corpus.
    BuildStats,
    /// Train the bi-encoder ranker through its negative-mining rounds.
    TrainBiencoder,
    /// Fit the entity-or-NIL selector and tune its threshold.
    TrainSelector,
    /// Detect mention spans without linking them.
    Detect(InOutArgs),
    /// Link documents: detect mentions, rank candidates, pick entity or NIL.
    Link(LinkArgs),
    /// Score a linking output against gold annotations.
    Evaluate(EvaluateArgs),
    /// Time disambiguation over a sample corpus.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct InOutArgs {
    /// Input documents, JSONL.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Output file, JSONL.
    #[arg(long = "out", value_name = "FILE")]
    output: PathBuf,
}

#[derive(Args)]
struct LinkArgs {
    #[command(flatten)]
    io: InOutArgs,
    /// Link the documents' own annotation spans instead of detecting.
    #[arg(long)]
    gold_spans: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Which task to score.
    #[arg(long, value_enum)]
    task: Task,
    /// Gold documents, JSONL.
    #[arg(long, value_name = "FILE")]
    gold: PathBuf,
    /// System output as written by `link`, JSONL.
    #[arg(long, value_name = "FILE")]
    pred: PathBuf,
    /// Report destination. Default: the prediction file with extension
    /// `metrics.json`.
    #[arg(long = "out", value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Sample documents, JSONL.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Timing report destination. Default: `benchmark.json` under the
    /// artifacts root.
    #[arg(long = "out", value_name = "FILE")]
    output: Option<PathBuf>,
    /// Timed passes over the sample (one extra warm-up pass is untimed).
    #[arg(long, default_value_t = 5)]
    repeats: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    /// Mention detection: span boundaries only.
    Md,
    /// Entity disambiguation: gold spans, predicted labels.
    Ed,
    /// End-to-end entity linking: spans and labels.
    El,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)
            .with_context(|| format!("invalid config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.propagate_seed();
    }
    let artifacts = config.artifacts_root();

    match cli.command {
        Command::TrainMlm => train_mlm(&config, &artifacts, cli.force),
        Command::TrainMd => train_md(&config, &artifacts, cli.force),
        Command::BuildStats => build_stats(&config, &artifacts, cli.force),
        Command::TrainBiencoder => train_biencoder_cmd(&config, &artifacts, cli.force),
        Command::TrainSelector => train_selector_cmd(&config, &artifacts, cli.force),
        Command::Detect(args) => detect(&config, &artifacts, cli.force, &args),
        Command::Link(args) => link(&config, &artifacts, cli.force, &args),
        Command::Evaluate(args) => evaluate(&config, &artifacts, cli.force, &args),
        Command::Benchmark(args) => benchmark_cmd(&config, &artifacts, cli.force, &args),
    }
}

// ---------------------------------------------------------------------------
// Training stages
// ---------------------------------------------------------------------------

fn train_mlm(config: &PipelineConfig, artifacts: &Path, force: bool) -> Result<()> {
    let out = artifacts.join(ENCODER_DIR);
    if skip_existing(force, "train-mlm", &[&out]) {
        return Ok(());
    }
    let sentences = load_sentences(&config.paths.sentences)?;
    log::info!(
        "pretraining on {} sentences for {} steps",
        sentences.len(),
        config.tapt.steps
    );
    let vocab = Vocab::build(sentences.iter().map(String::as_str), config.encoder.max_vocab);
    let enc_config = config.encoder.to_encoder_config(vocab.len());
    let base = EncoderCheckpoint::init(&enc_config, &vocab, config.seed)?;
    let outcome = pretrain_tapt(&sentences, &base, &config.tapt)?;
    if let (Some(first), Some(last)) = (outcome.step_losses.first(), outcome.step_losses.last()) {
        log::info!("masked cross-entropy {first:.4} -> {last:.4}");
    }
    outcome.checkpoint.save(&out)?;
    println!("wrote {}", out.display());

    Provenance::new("train-mlm", config)
        .input("sentences", &config.paths.sentences)?
        .output("encoder", &out)?
        .write(artifacts)
}

fn train_md(config: &PipelineConfig, artifacts: &Path, force: bool) -> Result<()> {
    let out = artifacts.join(MD_DIR);
    if skip_existing(force, "train-md", &[&out]) {
        return Ok(());
    }
    let encoder_dir = require_artifact(artifacts, ENCODER_DIR, "train-mlm")?;
    let base = EncoderCheckpoint::load(&encoder_dir)?;
    let train = load_documents(&config.paths.train, None, "train")?;
    let val = load_documents(&config.paths.val, None, "validation")?;
    let outcome = finetune_md(&base, &train, &val, &config.md)?;
    let best = outcome.epoch_val_f1.iter().cloned().fold(f64::MIN, f64::max);
    log::info!("best validation span F1 {best:.4}");
    outcome.model.save(&out)?;
    println!("wrote {}", out.display());

    Provenance::new("train-md", config)
        .input("encoder", &encoder_dir)?
        .input("train", &config.paths.train)?
        .input("val", &config.paths.val)?
        .output("md", &out)?
        .write(artifacts)
}

fn build_stats(config: &PipelineConfig, artifacts: &Path, force: bool) -> Result<()> {
    let out = artifacts.join(STATS_FILE);
    if skip_existing(force, "build-stats", &[&out]) {
        return Ok(());
    }
    let train = load_documents(&config.paths.train, None, "train")?;
    let table = SurfaceFormTable::build(&train);
    log::info!("{} tracked surface forms", table.len());
    table.save(&out)?;
    println!("wrote {}", out.display());

    Provenance::new("build-stats", config)
        .input("train", &config.paths.train)?
        .output("stats", &out)?
        .write(artifacts)
}

fn train_biencoder_cmd(config: &PipelineConfig, artifacts: &Path, force: bool) -> Result<()> {
    let out_model = artifacts.join(BIENCODER_DIR);
    let out_embeddings = artifacts.join(EMBEDDINGS_DIR);
    if skip_existing(force, "train-biencoder", &[&out_model, &out_embeddings]) {
        return Ok(());
    }
    let encoder_dir = require_artifact(artifacts, ENCODER_DIR, "train-mlm")?;
    let base = EncoderCheckpoint::load(&encoder_dir)?;
    let registry = Registry::load(&config.paths.registry)?;
    let train = load_documents(&config.paths.train, Some(&registry), "train")?;
    let outcome = train_biencoder(&train, &registry, &base, &config.biencoder)?;
    for round in &outcome.rounds {
        log::info!(
            "round {}: {} hard negatives, {} random per mention, {} pairs, mean loss {:.4}",
            round.round,
            round.hard_negatives,
            round.random_per_mention,
            round.pairs,
            round.mean_loss
        );
    }
    outcome.model.save(&out_model)?;
    let embeddings = outcome.model.embed_registry(&registry)?;
    embeddings.save(&out_embeddings)?;
    println!("wrote {}", out_model.display());
    println!("wrote {}", out_embeddings.display());

    Provenance::new("train-biencoder", config)
        .input("encoder", &encoder_dir)?
        .input("registry", &config.paths.registry)?
        .input("train", &config.paths.train)?
        .output("biencoder", &out_model)?
        .output("embeddings", &out_embeddings)?
        .write(artifacts)
}

fn train_selector_cmd(config: &PipelineConfig, artifacts: &Path, force: bool) -> Result<()> {
    let out = artifacts.join(SELECTOR_FILE);
    if skip_existing(force, "train-selector", &[&out]) {
        return Ok(());
    }
    let biencoder_dir = require_artifact(artifacts, BIENCODER_DIR, "train-biencoder")?;
    let embeddings_dir = require_artifact(artifacts, EMBEDDINGS_DIR, "train-biencoder")?;
    let stats_file = require_artifact(artifacts, STATS_FILE, "build-stats")?;
    let biencoder = BiEncoder::load(&biencoder_dir)?;
    let embeddings = EntityEmbeddings::load(&embeddings_dir)?;
    let table = SurfaceFormTable::load(&stats_file)?;
    let registry = Registry::load(&config.paths.registry)?;
    let train = load_documents(&config.paths.train, Some(&registry), "train")?;
    let val = load_documents(&config.paths.val, Some(&registry), "validation")?;
    let selector = train_selector(
        &train,
        &val,
        &biencoder,
        &embeddings,
        &registry,
        &table,
        &config.selector,
    )?;
    log::info!("selected τ = {}", selector.tau());
    selector.save(&out)?;
    println!("wrote {}", out.display());

    Provenance::new("train-selector", config)
        .input("biencoder", &biencoder_dir)?
        .input("embeddings", &embeddings_dir)?
        .input("stats", &stats_file)?
        .input("registry", &config.paths.registry)?
        .input("train", &config.paths.train)?
        .input("val", &config.paths.val)?
        .output("selector", &out)?
        .write(artifacts)
}

// ---------------------------------------------------------------------------
// Inference and evaluation
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct DetectedMention<'a> {
    doc_id: &'a str,
    start: usize,
    end: usize,
    mention: &'a str,
}

fn detect(config: &PipelineConfig, artifacts: &Path, force: bool, args: &InOutArgs) -> Result<()> {
    if skip_existing(force, "detect", &[&args.output]) {
        return Ok(());
    }
    let md_dir = require_artifact(artifacts, MD_DIR, "train-md")?;
    let md = MdModel::load(&md_dir)?;
    let docs = load_documents(&args.input, None, "input")?;

    let file = std::fs::File::create(&args.output)
        .with_context(|| format!("creating {}", args.output.display()))?;
    let mut out = std::io::BufWriter::new(file);
    let mut total = 0usize;
    for doc in &docs {
        for span in md.detect_mentions(&doc.text)? {
            let record = DetectedMention {
                doc_id: &doc.doc_id,
                start: span.start,
                end: span.end,
                mention: &span.surface,
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
            total += 1;
        }
    }
    out.flush()?;
    println!("wrote {} ({total} mentions in {} documents)", args.output.display(), docs.len());

    Provenance::new("detect", config)
        .input("md", &md_dir)?
        .input("documents", &args.input)?
        .output("mentions", &args.output)?
        .write(artifacts)
}

fn link(config: &PipelineConfig, artifacts: &Path, force: bool, args: &LinkArgs) -> Result<()> {
    if skip_existing(force, "link", &[&args.io.output]) {
        return Ok(());
    }
    let (linker, artifact_dirs) = load_linker(config, artifacts)?;
    let docs = load_documents(&args.io.input, Some(linker.registry()), "input")?;

    let mut links: Vec<LinkedMention> = Vec::new();
    for doc in &docs {
        let decisions = if args.gold_spans {
            linker.link_gold_spans(doc)?
        } else {
            linker.link_document(&doc.text)?
        };
        links.extend(
            decisions
                .iter()
                .map(|decision| LinkedMention::from_decision(&doc.doc_id, decision)),
        );
    }
    save_links(&args.io.output, &links)?;
    println!(
        "wrote {} ({} mentions in {} documents)",
        args.io.output.display(),
        links.len(),
        docs.len()
    );

    let mut record = Provenance::new("link", config).input("documents", &args.io.input)?;
    for (name, dir) in &artifact_dirs {
        record = record.input(name, dir)?;
    }
    record.output("links", &args.io.output)?.write(artifacts)
}

fn evaluate(
    config: &PipelineConfig,
    artifacts: &Path,
    force: bool,
    args: &EvaluateArgs,
) -> Result<()> {
    let out = args
        .output
        .clone()
        .unwrap_or_else(|| args.pred.with_extension("metrics.json"));
    if skip_existing(force, "evaluate", &[&out]) {
        return Ok(());
    }
    let gold_docs = load_documents(&args.gold, None, "gold")?;
    let links = load_links(&args.pred)?;

    let report = match args.task {
        Task::Md => {
            let gold = gold_spans(&gold_docs);
            let mut pred: BTreeMap<String, Vec<Span>> =
                gold.keys().map(|id| (id.clone(), Vec::new())).collect();
            for link in &links {
                pred.entry(link.doc_id.clone())
                    .or_default()
                    .push(Span::new(link.start, link.end));
            }
            md_metrics(&gold, &pred)?
        }
        Task::Ed => {
            let gold = gold_labeled(&gold_docs);
            let mut pred: BTreeMap<String, Vec<LabeledSpan>> =
                gold.keys().map(|id| (id.clone(), Vec::new())).collect();
            for link in &links {
                pred.entry(link.doc_id.clone()).or_default().push(labeled_span(link));
            }
            ed_metrics(&gold, &pred)?
        }
        Task::El => {
            let gold = gold_labeled(&gold_docs);
            let mut pred: BTreeMap<String, Vec<LabeledSpan>> = BTreeMap::new();
            for link in &links {
                pred.entry(link.doc_id.clone()).or_default().push(labeled_span(link));
            }
            el_metrics(&gold, &pred)?
        }
    };
    report.save(&out)?;
    print_report(&report);
    println!("wrote {}", out.display());

    Provenance::new("evaluate", config)
        .input("gold", &args.gold)?
        .input("pred", &args.pred)?
        .output("report", &out)?
        .write(artifacts)
}

fn benchmark_cmd(
    config: &PipelineConfig,
    artifacts: &Path,
    force: bool,
    args: &BenchmarkArgs,
) -> Result<()> {
    let out = args
        .output
        .clone()
        .unwrap_or_else(|| artifacts.join("benchmark.json"));
    if skip_existing(force, "benchmark", &[&out]) {
        return Ok(());
    }
    let (linker, artifact_dirs) = load_linker(config, artifacts)?;
    let docs = load_documents(&args.input, Some(linker.registry()), "sample")?;

    // Detection runs once, outside the timed region: the convention is to
    // time disambiguation of already-detected mentions.
    let mut sample = Vec::with_capacity(docs.len());
    for doc in &docs {
        let annotations = linker
            .detect(&doc.text)?
            .into_iter()
            .map(|span| GoldAnnotation {
                start: span.start,
                end: span.end,
                surface: span.surface,
                label: EntityLabel::Nil,
            })
            .collect();
        sample.push(Document::new(doc.doc_id.clone(), doc.text.clone(), annotations)?);
    }
    for doc in &sample {
        linker.link_gold_spans(doc)?; // surface errors before timing starts
    }
    let timing = benchmark(
        |doc: &Document| {
            let _ = linker.link_gold_spans(doc);
        },
        &sample,
        args.repeats,
    )?;
    println!(
        "{} documents, {} repeats: {:.4}s ± {:.4}s per pass",
        timing.sample_size, timing.repeats, timing.mean_seconds, timing.std_seconds
    );
    let mut json = serde_json::to_string_pretty(&timing)?;
    json.push('\n');
    std::fs::write(&out, json).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {}", out.display());

    let mut record = Provenance::new("benchmark", config).input("documents", &args.input)?;
    for (name, dir) in &artifact_dirs {
        record = record.input(name, dir)?;
    }
    record.write(artifacts)
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// When every output already exists and `--force` is absent, log and signal
/// the caller to return successfully without doing anything.
fn skip_existing(force: bool, command: &str, outputs: &[&Path]) -> bool {
    if force || outputs.iter().any(|path| !path.exists()) {
        return false;
    }
    for path in outputs {
        log::info!("{command}: {} exists; pass --force to rebuild", path.display());
    }
    true
}

/// Resolve a stage artifact, naming the command that produces it when the
/// artifact is missing.
fn require_artifact(artifacts: &Path, name: &str, produced_by: &str) -> Result<PathBuf> {
    let path = artifacts.join(name);
    if !path.exists() {
        bail!(
            "missing artifact {}: run `fundel {produced_by}` first",
            path.display()
        );
    }
    Ok(path)
}

/// Load every artifact the linker needs, failing with the name of the first
/// missing one. Returns the loaded linker along with the artifact paths for
/// provenance records.
fn load_linker(
    config: &PipelineConfig,
    artifacts: &Path,
) -> Result<(Linker, Vec<(&'static str, PathBuf)>)> {
    let md_dir = require_artifact(artifacts, MD_DIR, "train-md")?;
    let biencoder_dir = require_artifact(artifacts, BIENCODER_DIR, "train-biencoder")?;
    let embeddings_dir = require_artifact(artifacts, EMBEDDINGS_DIR, "train-biencoder")?;
    let stats_file = require_artifact(artifacts, STATS_FILE, "build-stats")?;
    let selector_file = require_artifact(artifacts, SELECTOR_FILE, "train-selector")?;

    let md = MdModel::load(&md_dir)?;
    let biencoder = BiEncoder::load(&biencoder_dir)?;
    let embeddings = EntityEmbeddings::load(&embeddings_dir)?;
    let table = SurfaceFormTable::load(&stats_file)?;
    let selector = SelectorModel::load(&selector_file)?;
    let registry = Registry::load(&config.paths.registry)?;
    let linker = Linker::new(md, biencoder, embeddings, registry, table, selector)?;
    let dirs = vec![
        ("md", md_dir),
        ("biencoder", biencoder_dir),
        ("embeddings", embeddings_dir),
        ("stats", stats_file),
        ("selector", selector_file),
        ("registry", config.paths.registry.clone()),
    ];
    Ok((linker, dirs))
}

fn load_documents(
    path: &Path,
    registry: Option<&Registry>,
    what: &str,
) -> Result<Vec<Document>> {
    let load = load_corpus(path, registry)
        .with_context(|| format!("loading {what} corpus {}", path.display()))?;
    if load.unknown_entity_refs > 0 {
        log::warn!(
            "{what} corpus {}: {} annotations reference entities missing from the registry",
            path.display(),
            load.unknown_entity_refs
        );
    }
    Ok(load.documents)
}

fn load_sentences(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading sentence corpus {}", path.display()))?;
    let sentences: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|line| !line.is_empty())
        .map(str::to_string)
        .collect();
    if sentences.is_empty() {
        bail!("sentence corpus {} is empty", path.display());
    }
    Ok(sentences)
}

fn labeled_span(link: &LinkedMention) -> LabeledSpan {
    LabeledSpan {
        span: Span::new(link.start, link.end),
        label: match &link.entity_id {
            Some(id) => EntityLabel::Id(id.clone()),
            None => EntityLabel::Nil,
        },
    }
}

fn print_report(report: &MetricsReport) {
    for block in &report.settings {
        let micro = metric_line(&block.micro);
        let macro_avg = metric_line(&block.macro_avg);
        println!(
            "{:<6} micro {micro}  macro {macro_avg}  ({} gold, {} predicted, {} documents)",
            block.setting.to_string(),
            block.support.gold,
            block.support.predicted,
            block.support.documents
        );
    }
}

fn metric_line(values: &fundel::eval::MetricValues) -> String {
    if let Some(prf1) = values.as_prf1() {
        format!("P {:.4} R {:.4} F1 {:.4}", prf1.precision, prf1.recall, prf1.f1)
    } else if let Some(accuracy) = values.as_accuracy() {
        format!("Acc {accuracy:.4}")
    } else {
        String::new()
    }
}

/// What a command read and wrote, keyed to the effective configuration.
/// Content digests stand in for timestamps so records stay byte-stable.
#[derive(Serialize)]
struct Provenance {
    command: &'static str,
    config_hash: String,
    seed: u64,
    inputs: BTreeMap<&'static str, String>,
    outputs: BTreeMap<&'static str, String>,
}

impl Provenance {
    fn new(command: &'static str, config: &PipelineConfig) -> Self {
        Provenance {
            command,
            config_hash: config.canonical_hash(),
            seed: config.seed,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn input(mut self, name: &'static str, path: impl AsRef<Path>) -> Result<Self> {
        let digest = artifact_digest(path.as_ref())?;
        self.inputs.insert(name, digest);
        Ok(self)
    }

    fn output(mut self, name: &'static str, path: impl AsRef<Path>) -> Result<Self> {
        let digest = artifact_digest(path.as_ref())?;
        self.outputs.insert(name, digest);
        Ok(self)
    }

    fn write(&self, artifacts: &Path) -> Result<()> {
        let dir = artifacts.join("provenance");
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(format!("{}.json", self.command));
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// Content digest of a file, or of a directory as the digest of its files'
/// relative paths and contents in sorted order.
fn artifact_digest(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        for rel in files {
            hasher.update(rel.as_bytes());
            hasher.update([0]);
            let bytes = std::fs::read(path.join(&rel))
                .with_context(|| format!("reading {}", path.join(&rel).display()))?;
            hasher.update(&bytes);
        }
    } else {
        let bytes =
            std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        hasher.update(&bytes);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("entry under root")
                .to_string_lossy()
                .into_owned();
            out.push(rel);
        }
    }
    Ok(())
}
