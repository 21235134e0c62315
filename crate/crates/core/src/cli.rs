//! Command-line driver. Every subcommand resolves its settings (defaults,
//! then the config file, then flags), writes a manifest under
//! `<out>/manifests/`, and only then starts work.
//!
//! Layout of the output directory:
//!
//! ```text
//! corpus.jsonl, split.json                 ingest / synth
//! cache/cache.jsonl                        provider responses
//! features/<variant>/<scheme>/             fit/validation/test.jsonl, reducer-<path>.bin, meta.json
//! runs/<variant>/<scheme>/dropout-<d>/repeat-<r>/
//!                                          record.json, ranker.bin, test_predictions.tsv
//! report.txt, report.tsv                   report
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, parse_corpus, split_corpus, ReviewCorpus, Split, SyntheticConfig};
use crate::error::{Error, Result};
use crate::features::{read_examples, write_examples, EmbeddingPath, Example, Variant};
use crate::lexicon::{sha256_hex, CategoryVocabulary};
use crate::pipeline::{build_raw, prepare, run_one, PreparedData, DEFAULT_TEST_FRACTION};
use crate::providers::remote::{RemoteConfig, RemoteProvider};
use crate::providers::stub::StubProvider;
use crate::providers::{Cache, Enricher, Provider};
use crate::ranker::Ranker;
use crate::reducer::Reducer;
use crate::report::render_report;
use crate::train::{evaluate, Grid, LossScheme, Reduction, RunRecord, TrainConfig, DEFAULT_THRESHOLD};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const SPLIT_FILE: &str = "split.json";

#[derive(Debug, Parser)]
#[command(name = "mmrec", version, about = "Review ranking with enriched features and class-weighted training")]
#[command(after_help = "Remote enrichment reads MMREC_PROVIDER_URL (endpoint) and MMREC_PROVIDER_KEY (credential) from the environment; pass --offline to use the built-in stubs.")]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Flat `key = value` settings file, or a manifest written by a previous run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags that override settings keys of the same name.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub reviews: Option<usize>,
    #[arg(long, global = true)]
    pub users: Option<usize>,
    #[arg(long, global = true)]
    pub businesses: Option<usize>,
    /// Fraction of positive reviews in generated data.
    #[arg(long, global = true)]
    pub positive: Option<f64>,
    /// Probability that a generated review carries a planted informative sentence.
    #[arg(long, global = true)]
    pub informative_rate: Option<f64>,
    #[arg(long, global = true)]
    pub test_fraction: Option<f64>,
    /// Variants, comma separated: baseline, proposed, proposed-text, proposed-image.
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// Loss schemes, comma separated: basic, sqrt, unweighted.
    #[arg(long, global = true)]
    pub loss: Option<String>,
    /// Dropout rates, comma separated.
    #[arg(long, global = true)]
    pub dropout: Option<String>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub max_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub patience: Option<usize>,
    #[arg(long, global = true)]
    pub repeats: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    /// Loss reduction over a batch: sum or mean.
    #[arg(long, global = true)]
    pub reduction: Option<String>,
    #[arg(long, global = true)]
    pub validation_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub reducer_epochs: Option<usize>,
    /// Concurrent provider calls.
    #[arg(long, global = true)]
    pub fanout: Option<usize>,
    #[arg(long, global = true)]
    pub timeout_secs: Option<u64>,
    #[arg(long, global = true)]
    pub retries: Option<u32>,
    /// Use in-process stub providers instead of the remote service.
    #[arg(long, global = true)]
    pub offline: bool,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        macro_rules! push {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    out.push((stringify!($field), v.to_string()));
                })*
            };
        }
        push!(
            seed, reviews, users, businesses, positive, informative_rate, test_fraction, variant, loss, dropout,
            learning_rate, max_epochs, patience, repeats, batch_size, reduction, validation_fraction,
            reducer_epochs, fanout, timeout_secs, retries
        );
        if self.offline {
            out.push(("offline", "true".into()));
        }
        out
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a review file and split it into train and test.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Generate a synthetic corpus and split it.
    Synth,
    /// Run every provider call the selected variants need, filling the cache.
    Enrich,
    /// Build reducers and examples per variant and loss scheme.
    Features,
    /// Train every (variant, loss, dropout) cell `repeats` times.
    Train,
    /// Reload checkpoints and recompute their test metrics.
    Evaluate {
        /// A single run directory; defaults to every run under <out>/runs.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Features and training for the single-modality ablations and full proposed model.
    Ablate,
    /// Render result tables from stored run records.
    Report {
        /// Directory searched for run records; defaults to <out>/runs.
        #[arg(long)]
        runs: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Synth => "synth",
            Command::Enrich => "enrich",
            Command::Features => "features",
            Command::Train => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Ablate => "ablate",
            Command::Report { .. } => "report",
        }
    }
}

/// Fully resolved settings. Every field has a concrete value, so a manifest
/// alone is enough to replay a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub seed: u64,
    pub reviews: usize,
    pub users: usize,
    pub businesses: usize,
    pub positive: f64,
    pub informative_rate: f64,
    pub test_fraction: f64,
    pub input: Option<PathBuf>,
    pub variant: Vec<Variant>,
    pub loss: Vec<LossScheme>,
    pub dropout: Vec<f64>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub repeats: usize,
    pub batch_size: usize,
    pub reduction: Reduction,
    pub validation_fraction: f64,
    pub reducer_epochs: usize,
    pub fanout: usize,
    pub timeout_secs: u64,
    pub retries: u32,
    pub offline: bool,
}

impl Default for Settings {
    fn default() -> Self {
        let synth = SyntheticConfig::default();
        let train = TrainConfig::default();
        let grid = Grid::full(train.repeats);
        Self {
            seed: train.seed,
            reviews: synth.n_reviews,
            users: synth.n_users,
            businesses: synth.n_businesses,
            positive: synth.positive_fraction,
            informative_rate: synth.informative_sentence_rate,
            test_fraction: DEFAULT_TEST_FRACTION,
            input: None,
            variant: grid.variants,
            loss: grid.schemes,
            dropout: grid.dropouts,
            learning_rate: train.learning_rate,
            max_epochs: train.max_epochs,
            patience: train.patience,
            repeats: train.repeats,
            batch_size: train.batch_size,
            reduction: train.reduction,
            validation_fraction: train.validation_fraction,
            reducer_epochs: train.reducer_epochs,
            fanout: 4,
            timeout_secs: 60,
            retries: 3,
            offline: false,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for {key}")))
}

fn parse_list<T, F>(key: &str, value: &str, parse: F) -> Result<Vec<T>>
where
    F: Fn(&str) -> Result<T>,
{
    let items = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect::<Result<Vec<_>>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("{key} needs at least one value")));
    }
    Ok(items)
}

impl Settings {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let k = key.as_str();
        match k {
            "seed" => self.seed = parse_value(k, value)?,
            "reviews" => self.reviews = parse_value(k, value)?,
            "users" => self.users = parse_value(k, value)?,
            "businesses" => self.businesses = parse_value(k, value)?,
            "positive" => self.positive = parse_value(k, value)?,
            "informative_rate" => self.informative_rate = parse_value(k, value)?,
            "test_fraction" => self.test_fraction = parse_value(k, value)?,
            "input" => self.input = Some(PathBuf::from(value.trim())),
            "variant" => self.variant = parse_list(k, value, str::parse)?,
            "loss" => self.loss = parse_list(k, value, str::parse)?,
            "dropout" => self.dropout = parse_list(k, value, |s| parse_value(k, s))?,
            "learning_rate" => self.learning_rate = parse_value(k, value)?,
            "max_epochs" => self.max_epochs = parse_value(k, value)?,
            "patience" => self.patience = parse_value(k, value)?,
            "repeats" => self.repeats = parse_value(k, value)?,
            "batch_size" => self.batch_size = parse_value(k, value)?,
            "reduction" => self.reduction = value.trim().parse()?,
            "validation_fraction" => self.validation_fraction = parse_value(k, value)?,
            "reducer_epochs" => self.reducer_epochs = parse_value(k, value)?,
            "fanout" => self.fanout = parse_value(k, value)?,
            "timeout_secs" => self.timeout_secs = parse_value(k, value)?,
            "retries" => self.retries = parse_value(k, value)?,
            "offline" => self.offline = parse_value(k, value)?,
            _ => return Err(Error::Config(format!("unknown setting '{key}'"))),
        }
        Ok(())
    }

    /// Defaults, then the config file (flat `key = value` lines or a
    /// manifest's settings), then flags.
    pub fn resolve(config: Option<&Path>, overrides: &[(&str, String)]) -> Result<Self> {
        let mut settings = match config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
                Self::from_config_text(&text)?
            }
            None => Self::default(),
        };
        for (key, value) in overrides {
            settings.apply(key, value)?;
        }
        settings.validate()?;
        Ok(settings)
    }

    pub fn from_config_text(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            let manifest: RunManifest =
                serde_json::from_str(text).map_err(|e| Error::Config(format!("bad manifest: {e}")))?;
            return Ok(manifest.settings);
        }
        let mut settings = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
            settings.apply(key, value)?;
        }
        Ok(settings)
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic().validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction {} outside (0, 1)", self.test_fraction)));
        }
        self.grid(&self.variant).validate()?;
        for config in self.grid(&self.variant).configs(&self.base_config()) {
            config.1.validate()?;
        }
        Ok(())
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_users: self.users,
            n_businesses: self.businesses,
            n_reviews: self.reviews,
            positive_fraction: self.positive,
            informative_sentence_rate: self.informative_rate,
            seed: self.seed,
        }
    }

    pub fn base_config(&self) -> TrainConfig {
        TrainConfig {
            variant: self.variant[0],
            scheme: self.loss[0],
            dropout: self.dropout[0],
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            patience: self.patience,
            repeats: self.repeats,
            batch_size: self.batch_size,
            reduction: self.reduction,
            validation_fraction: self.validation_fraction,
            reducer_epochs: self.reducer_epochs,
            seed: self.seed,
        }
    }

    pub fn grid(&self, variants: &[Variant]) -> Grid {
        Grid {
            variants: variants.to_vec(),
            schemes: self.loss.clone(),
            dropouts: self.dropout.clone(),
            repeats: self.repeats,
        }
    }

    fn provider_mode(&self) -> ProviderMode {
        if self.offline {
            ProviderMode::Stub
        } else {
            ProviderMode::Remote
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Remote,
    Stub,
}

/// Written before a command does any work. Holds no endpoint or credential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub settings: Settings,
    /// Hash of the corpus the command reads; absent when it creates one.
    pub corpus_hash: Option<String>,
    pub vocabulary_hash: String,
    pub provider_mode: ProviderMode,
    pub out_dir: PathBuf,
}

/// Persisted alongside each trained checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredRun {
    pub record: RunRecord,
    /// Embedding path name -> reducer hash the examples were built with.
    pub reducer_hashes: BTreeMap<String, String>,
    pub ranker_hash: String,
}

/// Settings a feature directory was built with; training refuses to mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub variant: Variant,
    pub scheme: LossScheme,
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub reduction: Reduction,
    pub validation_fraction: f64,
    pub reducer_epochs: usize,
    pub corpus_hash: String,
    pub provider_mode: ProviderMode,
    pub reducer_hashes: BTreeMap<String, String>,
}

impl FeatureMeta {
    fn same_build(&self, other: &FeatureMeta) -> bool {
        FeatureMeta {
            reducer_hashes: BTreeMap::new(),
            ..self.clone()
        } == FeatureMeta {
            reducer_hashes: BTreeMap::new(),
            ..other.clone()
        }
    }
}

pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_) => EXIT_USAGE,
        e if e.is_provider() => EXIT_PROVIDER,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (including the program name). On failure the message is
/// printed and the exit status returned.
pub fn parse_args<I, T>(args: I) -> std::result::Result<Cli, i32>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    Cli::try_parse_from(args).map_err(|e| {
        let _ = e.print();
        match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
            _ => EXIT_USAGE,
        }
    })
}

/// Runs one parsed command and maps the outcome to an exit status.
pub fn execute(cli: &Cli) -> i32 {
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match parse_args(args) {
        Ok(cli) => execute(&cli),
        Err(code) => code,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let settings = Settings::resolve(cli.config.as_deref(), &cli.overrides.pairs())?;
    let out = cli.out.as_path();
    let command = cli.command.name();
    let settings = match &cli.command {
        Command::Ingest { input: Some(path) } => Settings {
            input: Some(path.clone()),
            ..settings
        },
        _ => settings,
    };
    let corpus_hash = match &cli.command {
        Command::Synth => None,
        Command::Ingest { .. } => {
            let input = settings
                .input
                .as_ref()
                .ok_or_else(|| Error::Config("ingest needs --input".into()))?;
            Some(sha256_hex(&fs::read(input)?))
        }
        _ => Some(corpus_hash(out)?),
    };
    write_manifest(
        out,
        &RunManifest {
            command: command.into(),
            config_path: cli.config.clone(),
            settings: settings.clone(),
            corpus_hash,
            vocabulary_hash: CategoryVocabulary.hash(),
            provider_mode: settings.provider_mode(),
            out_dir: out.to_path_buf(),
        },
    )?;
    info!("{command}: output in {}", out.display());

    match &cli.command {
        Command::Ingest { .. } => {
            let input = settings.input.as_ref().expect("checked above");
            let corpus = parse_corpus(BufReader::new(fs::File::open(input)?))?;
            let corpus = split_corpus(&corpus, settings.test_fraction, settings.seed)?;
            save_corpus(out, &corpus)?;
            println!("ingested {} reviews", corpus.len());
        }
        Command::Synth => {
            let corpus = generate_synthetic(&settings.synthetic())?;
            let corpus = split_corpus(&corpus, settings.test_fraction, settings.seed)?;
            save_corpus(out, &corpus)?;
            println!("generated {} reviews", corpus.len());
        }
        Command::Enrich => {
            let corpus = load_corpus(out)?;
            let enricher = enricher(out, &settings)?;
            for &variant in &settings.variant {
                build_raw(&corpus, &enricher, variant)?;
            }
            println!("cache holds {} entries", enricher.cache().len());
        }
        Command::Features => build_features(out, &settings, &settings.variant)?,
        Command::Train => {
            let records = train(out, &settings, &settings.variant)?;
            println!("trained {} runs", records.len());
        }
        Command::Evaluate { run } => {
            let dirs = match run {
                Some(dir) => vec![dir.clone()],
                None => find_runs(&out.join("runs"))?,
            };
            if dirs.is_empty() {
                return Err(Error::EmptyInput("no runs to evaluate".into()));
            }
            for dir in dirs {
                let stored = evaluate_run(out, &dir)?;
                let test = stored.record.test.expect("evaluate_run fills test metrics");
                println!(
                    "{}: accuracy {:.2}% fp rate {:.2}% (matches record)",
                    dir.display(),
                    100.0 * test.accuracy,
                    100.0 * test.fp_rate
                );
            }
        }
        Command::Ablate => {
            let variants = [Variant::Proposed, Variant::ProposedText, Variant::ProposedImage];
            build_features(out, &settings, &variants)?;
            let records = train(out, &settings, &variants)?;
            let report = render_report(&records)?;
            fs::write(out.join("ablation.txt"), &report.text)?;
            fs::write(out.join("ablation.tsv"), &report.tsv)?;
            print!("{}", report.text);
        }
        Command::Report { runs } => {
            let dir = runs.clone().unwrap_or_else(|| out.join("runs"));
            let records = load_records(&dir)?;
            let report = render_report(&records)?;
            fs::write(out.join("report.txt"), &report.text)?;
            fs::write(out.join("report.tsv"), &report.tsv)?;
            print!("{}", report.text);
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_manifest(out: &Path, manifest: &RunManifest) -> Result<()> {
    write_json(&out.join("manifests").join(format!("{}.json", manifest.command)), manifest)
}

pub fn save_corpus(out: &Path, corpus: &ReviewCorpus) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut file = BufWriter::new(fs::File::create(out.join(CORPUS_FILE))?);
    corpus.write_jsonl(&mut file)?;
    file.flush()?;
    write_json(&out.join(SPLIT_FILE), &corpus.split)
}

pub fn load_corpus(out: &Path) -> Result<ReviewCorpus> {
    let path = out.join(CORPUS_FILE);
    let file = fs::File::open(&path)
        .map_err(|e| Error::EmptyInput(format!("{}: {e}; run ingest or synth first", path.display())))?;
    let corpus = parse_corpus(BufReader::new(file))?;
    let split: BTreeMap<String, Split> = read_json(&out.join(SPLIT_FILE))?;
    corpus.with_split(split)
}

/// Hash over the corpus file and its split map.
pub fn corpus_hash(out: &Path) -> Result<String> {
    let read = |name: &str| {
        fs::read(out.join(name))
            .map_err(|e| Error::EmptyInput(format!("{}: {e}; run ingest or synth first", out.join(name).display())))
    };
    let mut bytes = read(CORPUS_FILE)?;
    bytes.push(0);
    bytes.extend(read(SPLIT_FILE)?);
    Ok(sha256_hex(&bytes))
}

fn enricher(out: &Path, settings: &Settings) -> Result<Enricher> {
    let cache = Cache::open(out.join("cache"))?;
    let provider: Box<dyn Provider> = if settings.offline {
        Box::new(StubProvider)
    } else {
        let config = RemoteConfig::from_env(Duration::from_secs(settings.timeout_secs), settings.retries)?;
        Box::new(RemoteProvider::new(config))
    };
    Ok(Enricher::new(provider, cache).with_fanout(settings.fanout))
}

pub fn feature_dir(out: &Path, variant: Variant, scheme: LossScheme) -> PathBuf {
    out.join("features").join(variant.name()).join(scheme.name())
}

pub fn run_dir(out: &Path, config: &TrainConfig, repeat: usize) -> PathBuf {
    out.join("runs")
        .join(config.variant.name())
        .join(config.scheme.name())
        .join(format!("dropout-{}", config.dropout))
        .join(format!("repeat-{repeat}"))
}

fn reducer_file(path: EmbeddingPath) -> String {
    format!("reducer-{}.bin", path.name())
}

fn feature_meta(settings: &Settings, variant: Variant, scheme: LossScheme, corpus_hash: String) -> FeatureMeta {
    FeatureMeta {
        variant,
        scheme,
        seed: settings.seed,
        learning_rate: settings.learning_rate,
        batch_size: settings.batch_size,
        reduction: settings.reduction,
        validation_fraction: settings.validation_fraction,
        reducer_epochs: settings.reducer_epochs,
        corpus_hash,
        provider_mode: settings.provider_mode(),
        reducer_hashes: BTreeMap::new(),
    }
}

fn write_example_file(path: &Path, examples: &[Example]) -> Result<()> {
    let mut file = BufWriter::new(fs::File::create(path)?);
    write_examples(examples, &mut file)?;
    file.flush()?;
    Ok(())
}

fn read_example_file(path: &Path) -> Result<Vec<Example>> {
    let file = fs::File::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    read_examples(BufReader::new(file))
}

fn build_features(out: &Path, settings: &Settings, variants: &[Variant]) -> Result<()> {
    let corpus = load_corpus(out)?;
    let hash = corpus_hash(out)?;
    let enricher = enricher(out, settings)?;
    for &variant in variants {
        let raw = build_raw(&corpus, &enricher, variant)?;
        for &scheme in &settings.loss {
            let config = TrainConfig {
                variant,
                scheme,
                ..settings.base_config()
            };
            let data = prepare(&raw, &config)?;
            let dir = feature_dir(out, variant, scheme);
            fs::create_dir_all(&dir)?;
            write_example_file(&dir.join("fit.jsonl"), &data.fit)?;
            write_example_file(&dir.join("validation.jsonl"), &data.validation)?;
            write_example_file(&dir.join("test.jsonl"), &data.test)?;
            let mut meta = feature_meta(settings, variant, scheme, hash.clone());
            for reducer in &data.reducers {
                fs::write(dir.join(reducer_file(reducer.path())), reducer.to_bytes())?;
                meta.reducer_hashes.insert(reducer.path().name().into(), reducer.hash());
            }
            write_json(&dir.join("meta.json"), &meta)?;
            println!(
                "{variant} / {scheme}: {} fit, {} validation, {} test examples",
                data.fit.len(),
                data.validation.len(),
                data.test.len()
            );
        }
    }
    Ok(())
}

/// Loads a feature directory, checking reducer files against their recorded hashes.
pub fn load_features(out: &Path, variant: Variant, scheme: LossScheme) -> Result<(PreparedData, FeatureMeta)> {
    let dir = feature_dir(out, variant, scheme);
    let meta: FeatureMeta = read_json(&dir.join("meta.json"))
        .map_err(|e| Error::EmptyInput(format!("{e}; run features first")))?;
    let mut reducers = Vec::new();
    for &path in variant.paths() {
        let reducer = Reducer::from_bytes(&fs::read(dir.join(reducer_file(path)))?)?;
        if meta.reducer_hashes.get(path.name()) != Some(&reducer.hash()) {
            return Err(Error::Format(format!("{} reducer in {} does not match its recorded hash", path.name(), dir.display())));
        }
        reducers.push(reducer);
    }
    let data = PreparedData {
        variant,
        scheme,
        fit: read_example_file(&dir.join("fit.jsonl"))?,
        validation: read_example_file(&dir.join("validation.jsonl"))?,
        test: read_example_file(&dir.join("test.jsonl"))?,
        reducers,
    };
    Ok((data, meta))
}

fn write_predictions(path: &Path, examples: &[Example], probabilities: &[f64]) -> Result<()> {
    let mut file = BufWriter::new(fs::File::create(path)?);
    writeln!(file, "review_id\tlabel\tprobability\tpredicted")?;
    for (e, p) in examples.iter().zip(probabilities) {
        writeln!(file, "{}\t{}\t{p}\t{}", e.review_id, e.label, u8::from(*p >= DEFAULT_THRESHOLD))?;
    }
    file.flush()?;
    Ok(())
}

fn train(out: &Path, settings: &Settings, variants: &[Variant]) -> Result<Vec<RunRecord>> {
    let hash = corpus_hash(out)?;
    let base = settings.base_config();
    let mut records = Vec::new();
    for &variant in variants {
        for &scheme in &settings.loss {
            let (data, meta) = load_features(out, variant, scheme)?;
            let expected = feature_meta(settings, variant, scheme, hash.clone());
            if !meta.same_build(&expected) {
                return Err(Error::Config(format!(
                    "features for {variant} / {scheme} were built with other settings or another corpus; rerun features"
                )));
            }
            let grid = Grid {
                variants: vec![variant],
                schemes: vec![scheme],
                dropouts: settings.dropout.clone(),
                repeats: settings.repeats,
            };
            let jobs = grid.configs(&base);
            info!("{variant} / {scheme}: {} runs", jobs.len());
            let done = jobs
                .par_iter()
                .map(|(repeat, config)| run_one(&data, config, *repeat))
                .collect::<Result<Vec<_>>>()?;
            for run in done {
                let dir = run_dir(out, &run.record.config, run.record.repeat);
                fs::create_dir_all(&dir)?;
                let bytes = run.ranker.to_bytes();
                fs::write(dir.join("ranker.bin"), &bytes)?;
                write_predictions(&dir.join("test_predictions.tsv"), &data.test, &run.ranker.predict(&data.test)?)?;
                let stored = StoredRun {
                    record: run.record.clone(),
                    reducer_hashes: meta.reducer_hashes.clone(),
                    ranker_hash: sha256_hex(&bytes),
                };
                write_json(&dir.join("record.json"), &stored)?;
                records.push(run.record);
            }
        }
    }
    Ok(records)
}

/// Reloads a checkpoint and its feature directory and recomputes test
/// metrics; any difference from the stored record is an error.
pub fn evaluate_run(out: &Path, dir: &Path) -> Result<StoredRun> {
    let stored: StoredRun = read_json(&dir.join("record.json"))?;
    let bytes = fs::read(dir.join("ranker.bin"))?;
    if sha256_hex(&bytes) != stored.ranker_hash {
        return Err(Error::Format(format!("{}: checkpoint hash differs from the record", dir.display())));
    }
    let ranker = Ranker::from_bytes(&bytes)?;
    let config = &stored.record.config;
    let (data, meta) = load_features(out, config.variant, config.scheme)?;
    if meta.reducer_hashes != stored.reducer_hashes {
        return Err(Error::Format(format!(
            "{}: reducers in the feature directory differ from the ones used in training",
            dir.display()
        )));
    }
    let metrics = evaluate(&ranker, &data.test, &data.weights()?)?;
    if Some(metrics) != stored.record.test {
        return Err(Error::Format(format!("{}: recomputed test metrics differ from the record", dir.display())));
    }
    Ok(stored)
}

/// Every run directory (one holding `record.json`) below `root`, sorted.
pub fn find_runs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    if !root.is_dir() {
        return Ok(found);
    }
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join("record.json").is_file() {
            found.push(dir.clone());
        }
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

pub fn load_records(root: &Path) -> Result<Vec<RunRecord>> {
    find_runs(root)?
        .iter()
        .map(|dir| read_json::<StoredRun>(&dir.join("record.json")).map(|s| s.record))
        .collect()
}
