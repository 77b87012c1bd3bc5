//! The `calign` command line: caption, train, eval, retrieve, export.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::alignment::{
    self, fit_with, load_checkpoint, save_checkpoint, AlignError, AlignmentModel, ModelConfig,
    OptimizerKind, Preset, TrainConfig, TrainHistory,
};
use crate::dataset::{
    self, attach_captions, class_names, read_manifest, resolve_features, split_records, tokenize,
    DatasetError, PairRecord, PairedSet, Sample, Split, SplitRatios, Vocab,
};
use crate::encoders::EncoderMode;
use crate::inference::{
    self, aggregate_report, build_index, export_embeddings, retrieve, top1_accuracy, EvalReport,
    InferenceError, Modality, PromptSet, Query, RetrieveOptions, DEFAULT_TEMPLATE,
};
use crate::numcore::Matrix;
use crate::rng;
use crate::synthetic::{write_synthetic, SyntheticSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("record {0:?} has no caption")]
    MissingCaption(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

const WRAPPERS: [&str; 5] = ["Align", "Dataset", "Encoder", "Num", "Inference"];

impl CliError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// Machine-readable code: the innermost error variant name.
    pub fn code(&self) -> String {
        match self {
            Self::Usage(_) => return "UsageError".into(),
            Self::Config(_) => return "ConfigError".into(),
            Self::Io { .. } => return "Io".into(),
            _ => {}
        }
        let debug = format!("{self:?}");
        let mut s = debug.as_str();
        loop {
            let end = s
                .find(|c: char| !(c.is_alphanumeric() || c == '_'))
                .unwrap_or(s.len());
            let name = &s[..end];
            if WRAPPERS.contains(&name) && s[end..].starts_with('(') {
                s = &s[end + 1..];
            } else {
                return name.to_string();
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "calign", version, about = "Contrastive image/text alignment toolkit")]
pub struct Cli {
    /// Flat JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Attach captions from an external captioner; writes a new manifest.
    Caption(CaptionArgs),
    /// Split, train and save a checkpoint with its history.
    Train(TrainArgs),
    /// Zero-shot top-1 accuracy report.
    Eval(EvalArgs),
    /// Top-k retrieval against an index manifest.
    Retrieve(RetrieveArgs),
    /// Write joint-space image embeddings as TSV.
    Export(ExportArgs),
    /// Generate a synthetic class-centroid dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Shell command run as `sh -c`.
    #[arg(long)]
    pub captioner: String,
    #[arg(long)]
    pub output: PathBuf,
    /// Recaption records that already have a caption.
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    pub print_defaults: bool,
    /// Overrides the configured manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Overrides the configured preset (and its learning rate and epochs).
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Finetune,
    Desk,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// `NAME=PATH` or a path (name = file stem). Repeatable.
    #[arg(long = "manifest")]
    pub manifests: Vec<String>,
    /// Out-of-domain dataset names. Repeatable.
    #[arg(long)]
    pub ood: Vec<String>,
    /// Which records of each manifest to evaluate.
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitArg,
    /// Precomputed `NAME=ACCURACY` rows; no checkpoint is read.
    #[arg(long = "report-only")]
    pub report_only: Vec<String>,
    #[arg(long, default_value = "model")]
    pub method: String,
    /// Print JSON instead of the table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest of the items to search.
    #[arg(long)]
    pub index: PathBuf,
    /// Text query; a bare class name is rendered through the template.
    #[arg(long, conflicts_with = "query_image", required_unless_present = "query_image")]
    pub query: Option<String>,
    /// An index id, or `FILE.fvecs:ROW`.
    #[arg(long)]
    pub query_image: Option<String>,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    /// Which encoder builds the index.
    #[arg(long, value_enum, default_value = "image")]
    pub modality: ModalityArg,
    /// Leave the query item out of image-to-image results.
    #[arg(long)]
    pub exclude_self: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModalityArg {
    Image,
    Text,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
}

/// Flat run configuration. Missing keys take the defaults of the chosen
/// preset; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<String>,
    pub d_in: usize,
    pub hidden: usize,
    pub d_v: usize,
    pub d_t: usize,
    pub n: usize,
    pub image_mode: EncoderMode,
    pub text_mode: EncoderMode,
    pub vocab_size: usize,
    pub preset: Preset,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    pub template: String,
    pub seed: u64,
    pub out_dir: String,
}

impl RunConfig {
    pub fn for_preset(preset: Preset) -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::preset(preset, 0);
        let r = SplitRatios::default();
        Self {
            manifest: None,
            d_in: m.d_in,
            hidden: m.hidden,
            d_v: m.d_v,
            d_t: m.d_t,
            n: m.n,
            image_mode: m.image_mode,
            text_mode: m.text_mode,
            vocab_size: dataset::vocab::DEFAULT_VOCAB_SIZE,
            preset,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            optimizer: t.optimizer,
            train_ratio: r.train,
            val_ratio: r.val,
            test_ratio: r.test,
            template: DEFAULT_TEMPLATE.into(),
            seed: 0,
            out_dir: "out".into(),
        }
    }

    /// Parses JSON text, filling absent keys from the preset it names.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let given: Map<String, Value> =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let preset = match given.get("preset") {
            Some(p) => serde_json::from_value(p.clone()).map_err(|e| CliError::Config(format!("preset: {e}")))?,
            None => Preset::Finetune,
        };
        Self::merged(preset, given)
    }

    fn merged(preset: Preset, overrides: Map<String, Value>) -> Result<Self, CliError> {
        let mut base = match serde_json::to_value(Self::for_preset(preset)) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("config serializes to an object"),
        };
        base.extend(overrides);
        serde_json::from_value(Value::Object(base)).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Switches preset, replacing the preset-derived learning rate and epochs.
    pub fn with_preset(&self, preset: Preset) -> Self {
        let t = TrainConfig::preset(preset, self.seed);
        Self {
            preset,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            ..self.clone()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_in: self.d_in,
            hidden: self.hidden,
            d_v: self.d_v,
            d_t: self.d_t,
            n: self.n,
            image_mode: self.image_mode,
            text_mode: self.text_mode,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            optimizer: self.optimizer,
            preset: self.preset,
        }
    }

    pub fn ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.train_ratio,
            val: self.val_ratio,
            test: self.test_ratio,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |e: String| CliError::Config(e);
        self.model_config().validate().map_err(|e| wrap(e.to_string()))?;
        self.train_config().validate().map_err(|e| wrap(e.to_string()))?;
        self.ratios().validate().map_err(|e| wrap(e.to_string()))?;
        if self.vocab_size < 2 {
            return Err(wrap(format!("vocab_size must be at least 2, got {}", self.vocab_size)));
        }
        if self.template.matches("{CLS}").count() != 1 {
            return Err(wrap(format!("template needs exactly one {{CLS}}: {:?}", self.template)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_preset(Preset::Finetune)
    }
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AlignmentModel,
    pub history: TrainHistory,
    /// All records with their split assigned.
    pub records: Vec<PairRecord>,
    pub samples: Vec<Sample>,
}

impl TrainOutcome {
    pub fn split(&self, split: Split) -> Vec<Sample> {
        self.samples
            .iter()
            .filter(|s| s.split == Some(split))
            .cloned()
            .collect()
    }
}

/// Assigns splits unless every record already carries one.
pub fn assign_splits(records: Vec<PairRecord>, ratios: SplitRatios, seed: u64) -> Result<Vec<PairRecord>, CliError> {
    if !records.is_empty() && records.iter().all(|r| r.split.is_some()) {
        return Ok(records);
    }
    Ok(split_records(records, ratios, seed)?)
}

pub fn paired_set(samples: &[Sample], vocab: &Vocab) -> Result<PairedSet, CliError> {
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
    let tokens = samples
        .iter()
        .map(|s| {
            s.caption
                .as_deref()
                .map(|c| tokenize(c, vocab))
                .ok_or_else(|| CliError::MissingCaption(s.id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PairedSet::new(Matrix::from_rows(&rows), tokens)?)
}

/// Splits, builds the vocabulary from train captions, initializes and fits.
pub fn run_training(
    config: &RunConfig,
    records: Vec<PairRecord>,
    base_dir: &Path,
    mut on_epoch: impl FnMut(&alignment::EpochReport),
) -> Result<TrainOutcome, CliError> {
    config.validate()?;
    let records = assign_splits(records, config.ratios(), config.seed)?;
    let samples = resolve_features(&records, base_dir)?;
    if let Some(s) = samples.first() {
        if s.features.len() != config.d_in {
            return Err(CliError::Config(format!(
                "d_in is {} but features have dimension {}",
                config.d_in,
                s.features.len()
            )));
        }
    }
    let of = |split| samples.iter().filter(move |s: &&Sample| s.split == Some(split)).cloned().collect::<Vec<_>>();
    let train = of(Split::Train);
    let val = of(Split::Val);
    let vocab = Vocab::build(
        train.iter().filter_map(|s| s.caption.as_deref()),
        config.vocab_size,
    );
    let train_set = paired_set(&train, &vocab)?;
    let val_set = if val.is_empty() { None } else { Some(paired_set(&val, &vocab)?) };
    let mut model = AlignmentModel::new(
        config.model_config(),
        vocab,
        class_names(&records),
        &mut rng::seeded(rng::derive_seed(config.seed, u64::MAX)),
    )?;
    let history = fit_with(&mut model, &train_set, val_set.as_ref(), &config.train_config(), &mut on_epoch)?;
    Ok(TrainOutcome {
        model,
        history,
        records,
        samples,
    })
}

#[derive(Serialize)]
struct Timing<'a> {
    wall_time_secs: &'a [f64],
}

struct Context {
    config: RunConfig,
    out_dir: PathBuf,
}

fn load_config(cli: &Cli) -> Result<Context, CliError> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        config.out_dir = dir.display().to_string();
    }
    let out_dir = PathBuf::from(&config.out_dir);
    Ok(Context { config, out_dir })
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Parses and runs; returns the process exit status.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(err, "error[UsageError]: {first}");
            return 2;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            let _ = writeln!(err, "error[{}]: {msg}", e.code());
            1
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let ctx = load_config(cli)?;
    match &cli.command {
        Command::Caption(a) => cmd_caption(a, out),
        Command::Train(a) => cmd_train(&ctx, a, out),
        Command::Eval(a) => cmd_eval(&ctx, a, out),
        Command::Retrieve(a) => cmd_retrieve(&ctx, a, out),
        Command::Export(a) => cmd_export(a, out),
        Command::Synth(a) => cmd_synth(&ctx, a, out),
    }
}

fn say(out: &mut dyn Write, line: impl std::fmt::Display) {
    let _ = writeln!(out, "{line}");
}

fn cmd_caption(a: &CaptionArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let same = match (fs::canonicalize(&a.manifest), fs::canonicalize(&a.output)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    };
    if same {
        return Err(CliError::Usage("--output must differ from --manifest".into()));
    }
    let manifest = read_manifest(&a.manifest)?;
    let updated = attach_captions(&manifest.records, &manifest.base_dir, &a.captioner, a.overwrite)?;
    let changed = updated.iter().zip(&manifest.records).filter(|(n, o)| n != o).count();
    if changed == 0 {
        fs::copy(&a.manifest, &a.output).map_err(|e| CliError::io(&a.output, e))?;
    } else {
        manifest.write_updated(&a.output, &updated)?;
    }
    say(out, format!("captioned {changed} of {} records -> {}", updated.len(), a.output.display()));
    Ok(())
}

fn cmd_train(ctx: &Context, a: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut config = ctx.config.clone();
    if let Some(p) = a.preset {
        config = config.with_preset(match p {
            PresetArg::Finetune => Preset::Finetune,
            PresetArg::Desk => Preset::Desk,
        });
    }
    if let Some(m) = &a.manifest {
        config.manifest = Some(m.display().to_string());
    }
    if a.print_defaults {
        say(out, config.to_json());
        return Ok(());
    }
    config.validate()?;
    let manifest_path = config
        .manifest
        .clone()
        .ok_or_else(|| CliError::Config("no manifest given".into()))?;
    let manifest = read_manifest(&manifest_path)?;
    let epochs = config.epochs;
    let outcome = run_training(&config, manifest.records, &manifest.base_dir, |r| {
        let val = r.val_loss.map_or("n/a".to_string(), |v| format!("{v:.6}"));
        say(
            out,
            format!(
                "epoch {}/{epochs} train_loss={:.6} val_loss={val} logit_scale={:.4}",
                r.epoch + 1,
                r.train_loss,
                r.logit_scale
            ),
        );
    })?;

    let dir = &ctx.out_dir;
    ensure_dir(dir)?;
    save_checkpoint(&outcome.model, dir.join("model.ckpt"))?;
    let history = serde_json::to_string_pretty(&outcome.history).expect("history serializes");
    write_file(&dir.join("history.json"), history + "\n")?;
    let timing = serde_json::to_string_pretty(&Timing {
        wall_time_secs: &outcome.history.wall_time_secs,
    })
    .expect("timing serializes");
    write_file(&dir.join("timing.json"), timing + "\n")?;
    write_file(&dir.join("config.json"), config.to_json() + "\n")?;
    // Absolute feature paths keep the split manifest usable from out_dir.
    let mut split_records = outcome.records.clone();
    for r in &mut split_records {
        let p = dataset::manifest::resolve_path(&manifest.base_dir, &r.features);
        r.features = fs::canonicalize(&p).unwrap_or(p).display().to_string();
    }
    dataset::write_manifest(dir.join("split.jsonl"), &split_records)?;
    match outcome.history.val_loss.last().copied().flatten() {
        Some(v) => say(out, format!("final val loss: {v:.6}")),
        None => say(out, "final val loss: n/a"),
    }
    Ok(())
}

fn parse_named(spec: &str) -> (String, String) {
    match spec.split_once('=') {
        Some((n, v)) => (n.to_string(), v.to_string()),
        None => {
            let stem = Path::new(spec)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| spec.to_string());
            (stem, spec.to_string())
        }
    }
}

fn select_split(samples: Vec<Sample>, split: SplitArg) -> Vec<Sample> {
    let want = match split {
        SplitArg::All => return samples,
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    };
    samples.into_iter().filter(|s| s.split == Some(want)).collect()
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<Sample>, CliError> {
    let m = read_manifest(path)?;
    Ok(resolve_features(&m.records, &m.base_dir)?)
}

fn cmd_eval(ctx: &Context, a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut rows: Vec<(String, f64)> = Vec::new();
    if !a.report_only.is_empty() {
        if !a.manifests.is_empty() {
            return Err(CliError::Usage("--report-only cannot be combined with --manifest".into()));
        }
        for spec in &a.report_only {
            let (name, value) = spec
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("expected NAME=ACCURACY, got {spec:?}")))?;
            let v: f64 = value
                .parse()
                .map_err(|_| CliError::Usage(format!("not a number: {value:?}")))?;
            rows.push((name.to_string(), v));
        }
    } else {
        let ckpt = a
            .checkpoint
            .as_ref()
            .ok_or_else(|| CliError::Usage("--checkpoint is required without --report-only".into()))?;
        if a.manifests.is_empty() {
            return Err(CliError::Usage("at least one --manifest is required".into()));
        }
        let model = load_checkpoint(ckpt)?;
        let prompts = PromptSet::new(model.classes.clone(), &ctx.config.template)?;
        for spec in &a.manifests {
            let (name, path) = parse_named(spec);
            let samples = select_split(load_samples(&path)?, a.split);
            rows.push((name, top1_accuracy(&model, &samples, &prompts)?));
        }
    }
    let report: EvalReport = aggregate_report(&rows, &a.ood)?.with_method(a.method.clone());
    ensure_dir(&ctx.out_dir)?;
    write_file(&ctx.out_dir.join("report.json"), report.to_json() + "\n")?;
    if a.json {
        say(out, report.to_json());
    } else {
        let _ = write!(out, "{}", report.to_table());
    }
    Ok(())
}

fn resolve_image_query(spec: &str, index: &[Sample]) -> Result<(Vec<f64>, Option<String>), CliError> {
    if let Some(s) = index.iter().find(|s| s.id == spec) {
        return Ok((s.features.clone(), Some(s.id.clone())));
    }
    let (file, row) = spec
        .rsplit_once(':')
        .ok_or_else(|| CliError::Usage(format!("--query-image {spec:?} is neither an index id nor FILE:ROW")))?;
    let row: usize = row
        .parse()
        .map_err(|_| CliError::Usage(format!("bad row in --query-image {spec:?}")))?;
    let vectors = dataset::read_fvecs(file)?;
    let v = vectors.get(row).ok_or_else(|| {
        CliError::Dataset(DatasetError::UnresolvedFeature {
            id: spec.to_string(),
            path: file.to_string(),
            index: row,
            available: vectors.len(),
        })
    })?;
    Ok((v.iter().map(|&x| x as f64).collect(), None))
}

#[derive(Serialize)]
struct RetrievalJson<'a> {
    query: &'a str,
    k: usize,
    results: &'a [inference::Hit],
}

fn cmd_retrieve(ctx: &Context, a: &RetrieveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = load_checkpoint(&a.checkpoint)?;
    let samples = load_samples(&a.index)?;
    let modality = match a.modality {
        ModalityArg::Image => Modality::Image,
        ModalityArg::Text => Modality::Text,
    };
    let index = build_index(&model, &samples, modality)?;
    let mut options = RetrieveOptions {
        template: ctx.config.template.clone(),
        exclude: None,
    };
    let (query, label) = match (&a.query, &a.query_image) {
        (Some(text), _) => (Query::Text(text.clone()), text.clone()),
        (None, Some(spec)) => {
            let (x, self_id) = resolve_image_query(spec, &samples)?;
            if a.exclude_self {
                options.exclude = self_id;
            }
            (Query::Image(x), spec.clone())
        }
        (None, None) => return Err(CliError::Usage("--query or --query-image is required".into())),
    };
    let hits = retrieve(&model, &query, &index, a.k as usize, &options)?;
    let json = serde_json::to_string_pretty(&RetrievalJson {
        query: &label,
        k: hits.len(),
        results: &hits,
    })
    .expect("results serialize");
    ensure_dir(&ctx.out_dir)?;
    write_file(&ctx.out_dir.join("retrieval.json"), json.clone() + "\n")?;
    if a.json {
        say(out, json);
    } else {
        let width = hits.iter().map(|h| h.id.len()).max().unwrap_or(2).max(2);
        say(out, format!("rank  {:<width$}  cosine", "id"));
        for (i, h) in hits.iter().enumerate() {
            say(out, format!("{:>4}  {:<width$}  {:.6}", i + 1, h.id, h.cosine));
        }
    }
    Ok(())
}

fn cmd_export(a: &ExportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = load_checkpoint(&a.checkpoint)?;
    let samples = load_samples(&a.manifest)?;
    export_embeddings(&model, &samples, &a.output)?;
    say(out, format!("wrote {} embeddings -> {}", samples.len(), a.output.display()));
    Ok(())
}

fn cmd_synth(ctx: &Context, a: &SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = SyntheticSpec {
        per_class: a.per_class,
        dim: a.dim,
        noise: a.noise,
        seed: ctx.config.seed,
        ..Default::default()
    };
    let path = write_synthetic(&spec, &a.output)?;
    say(out, format!("wrote {} records -> {}", spec.per_class * spec.classes.len(), path.display()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_json() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(c.learning_rate, 2e-5);
        assert_eq!(c.epochs, 10);
        assert_eq!(c.batch_size, 32);
    }

    #[test]
    fn preset_fills_missing_keys() {
        let c = RunConfig::from_json(r#"{"preset":"desk","epochs":3}"#).unwrap();
        assert_eq!(c.learning_rate, 1e-2);
        assert_eq!(c.epochs, 3);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"epoch":3}"#), Err(CliError::Config(_))));
    }

    #[test]
    fn validation() {
        let base = RunConfig::default;
        let c = RunConfig { epochs: 0, ..base() };
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        let c = RunConfig { template: "no slot".into(), ..base() };
        assert!(c.validate().is_err());
        let c = RunConfig { train_ratio: 0.9, ..base() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn error_codes_name_the_leaf() {
        let e = CliError::Dataset(DatasetError::CaptionerFailed(127));
        assert_eq!(e.code(), "CaptionerFailed");
        let e = CliError::Inference(InferenceError::Align(AlignError::Dataset(DatasetError::BatchTooSmall(1))));
        assert_eq!(e.code(), "BatchTooSmall");
        let e = CliError::Inference(InferenceError::KTooLarge { k: 3, size: 2 });
        assert_eq!(e.code(), "KTooLarge");
        assert_eq!(CliError::Config("x".into()).code(), "ConfigError");
    }

    #[test]
    fn named_manifest_specs() {
        assert_eq!(parse_named("Space=data/a.jsonl"), ("Space".into(), "data/a.jsonl".into()));
        assert_eq!(parse_named("data/raw.jsonl"), ("raw".into(), "data/raw.jsonl".into()));
    }
}
