//! Command-line pipeline: `onehot`, `synth`, `train`, `transfer`, `eval`.
//!
//! Every subcommand writes its outputs under `--out` together with a
//! `manifest.json` that echoes the resolved configuration, the seed and the
//! SHA-256 of every input and output file. Settings resolve as
//! command-line flag, then config file (TOML), then built-in default.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, parse_encounters, split_by_date, write_encounters, DatasetSplit};
use crate::embedding::{encode_all, EmbeddingTable};
use crate::error::{Error, ErrorClass, Result};
use crate::evaluation::{evaluate_model, EvalReport, ResultTable, Scenario};
use crate::experiment::{data_window, default_cutoff, encode_split};
use crate::network::{CnnModel, DEFAULT_DROPOUT, DEFAULT_FILTERS};
use crate::synth::{generate_synthetic_sites, synthetic_semantic_table, SynthConfig};
use crate::training::{train, FreezeMask, OptimizerKind, Selection, TrainConfig, TrainHistory};
use crate::transfer::{run_transfer, Checkpoint, Provenance, TransferStrategy};
use crate::vocab::Vocabulary;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err.class() {
        ErrorClass::Usage => EXIT_USAGE,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numeric => EXIT_NUMERIC,
    }
}

#[derive(Debug, Parser)]
#[command(name = "concept-cnn", version, about = "Clinical-concept embedding CNN with cross-site transfer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the one-hot embedding table of a vocabulary.
    Onehot(OnehotArgs),
    /// Generate a synthetic source/target pair with matching embedding tables.
    Synth(SynthArgs),
    /// Train a model from scratch on one site.
    Train(TrainArgs),
    /// Adapt a source-site checkpoint to target-site data.
    Transfer(TransferArgs),
    /// Score a checkpoint on test data.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct OnehotArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with `semantic_dimension` and a `[synth]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Vocabulary to generate from (default: the built-in influenza schema).
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_source: Option<usize>,
    #[arg(long)]
    pub n_target: Option<usize>,
    #[arg(long)]
    pub semantic_dimension: Option<usize>,
}

/// Training flags shared by `train` and `transfer`.
#[derive(Debug, Args)]
pub struct TrainFlags {
    /// TOML file: `seed`, `cutoff`, `site`, `filters`, `dropout` and a `[train]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Test window starts on this date (YYYYMMDD).
    #[arg(long)]
    pub cutoff: Option<String>,
    #[arg(long)]
    pub site: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// adam or sgd.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// best_validation_auroc or final_epoch.
    #[arg(long)]
    pub selection: Option<String>,
    #[arg(long)]
    pub positive_weight: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub filters: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Comma-separated layers to freeze (conv, fc).
    #[arg(long)]
    pub freeze: Option<String>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// direct, linear or full.
    #[arg(long)]
    pub strategy: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Scenario tag for the report: local, direct, tune_linear, tune_full.
    #[arg(long, default_value = "local")]
    pub scenario: String,
    /// Score every record instead of only those on or after the cutoff.
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub cutoff: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub cutoff: String,
    pub site: String,
    pub filters: usize,
    pub dropout: f64,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            cutoff: data::format_date(default_cutoff()),
            site: String::new(),
            filters: DEFAULT_FILTERS,
            dropout: DEFAULT_DROPOUT,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthRunConfig {
    pub semantic_dimension: usize,
    pub synth: SynthConfig,
}

impl Default for SynthRunConfig {
    fn default() -> Self {
        SynthRunConfig { semantic_dimension: 32, synth: SynthConfig::default() }
    }
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub toolkit: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => toml::from_str(&read(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
        None => Ok(T::default()),
    }
}

fn parse_cutoff(value: &str) -> Result<NaiveDate> {
    data::parse_date(value, 0).map_err(|_| Error::Config(format!("cutoff {value:?} is not a YYYYMMDD date")))
}

/// Collects output files and writes them together with the manifest.
struct Outputs {
    dir: PathBuf,
    inputs: Vec<FileDigest>,
    files: Vec<(String, String)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Outputs { dir: dir.to_path_buf(), inputs: Vec::new(), files: Vec::new() }
    }

    fn input(&mut self, path: &Path) -> Result<String> {
        let text = read(path)?;
        self.inputs.push(FileDigest { path: path.display().to_string(), sha256: digest(text.as_bytes()) });
        Ok(text)
    }

    fn add(&mut self, name: &str, content: String) {
        self.files.push((name.to_string(), content));
    }

    fn finish(self, subcommand: &'static str, seed: Option<u64>, config: serde_json::Value) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let mut outputs = Vec::new();
        for (name, content) in &self.files {
            let path = self.dir.join(name);
            fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
            outputs.push(FileDigest { path: name.clone(), sha256: digest(content.as_bytes()) });
        }
        let manifest = RunManifest {
            toolkit: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            seed,
            config,
            inputs: self.inputs,
            outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn resolve_run_config(flags: &TrainFlags) -> Result<RunConfig> {
    let mut cfg: RunConfig = read_config(flags.config.as_deref())?;
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if let Some(c) = &flags.cutoff {
        cfg.cutoff = c.clone();
    }
    if let Some(s) = &flags.site {
        cfg.site = s.clone();
    }
    if let Some(e) = flags.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = flags.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = flags.learning_rate {
        cfg.train.learning_rate = lr;
    }
    if let Some(o) = &flags.optimizer {
        cfg.train.optimizer.kind = match o.as_str() {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            other => return Err(Error::Config(format!("unknown optimizer {other:?}"))),
        };
    }
    if let Some(s) = &flags.selection {
        cfg.train.selection = match s.as_str() {
            "best_validation_auroc" => Selection::BestValidationAuroc,
            "final_epoch" => Selection::FinalEpoch,
            other => return Err(Error::Config(format!("unknown selection rule {other:?}"))),
        };
    }
    if let Some(w) = flags.positive_weight {
        cfg.train.positive_weight = w;
    }
    // One seed drives the split, initialization, shuffling and dropout.
    cfg.train.seed = cfg.seed;
    parse_cutoff(&cfg.cutoff)?;
    cfg.train.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    seed: u64,
    config: &'a RunConfig,
    train_size: usize,
    validation_size: usize,
    history: Option<&'a TrainHistory>,
}

fn metadata_json(meta: &RunMetadata<'_>) -> Result<String> {
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    Ok(text)
}

#[derive(Serialize)]
struct ReportFile<'a> {
    reports: &'a [EvalReport],
    table: ResultTable,
}

fn report_json(reports: &[EvalReport]) -> Result<String> {
    let mut table = ResultTable::default();
    for r in reports {
        table.record(r);
    }
    let mut text = serde_json::to_string_pretty(&ReportFile { reports, table })?;
    text.push('\n');
    Ok(text)
}

pub fn cmd_onehot(args: &OnehotArgs) -> Result<()> {
    let mut out = Outputs::new(&args.out);
    let vocab = Vocabulary::from_json(&out.input(&args.vocab)?)?;
    let table = EmbeddingTable::one_hot(&vocab)?;
    out.add("onehot.emb.jsonl", table.to_text());
    out.finish("onehot", None, serde_json::json!({ "dimension": table.dimension() }))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut out = Outputs::new(&args.out);
    let mut cfg: SynthRunConfig = read_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.synth.seed = seed;
    }
    if let Some(n) = args.n_source {
        cfg.synth.n_source = n;
    }
    if let Some(n) = args.n_target {
        cfg.synth.n_target = n;
    }
    if let Some(d) = args.semantic_dimension {
        cfg.semantic_dimension = d;
    }
    let vocab = match &args.vocab {
        Some(p) => Vocabulary::from_json(&out.input(p)?)?,
        None => Vocabulary::influenza_schema(),
    };
    let (source, target) = generate_synthetic_sites(&cfg.synth, &vocab)?;
    let semantic =
        synthetic_semantic_table(&vocab, &cfg.synth.synonym_pairs, cfg.semantic_dimension, cfg.synth.seed)?;
    let one_hot = EmbeddingTable::one_hot(&vocab)?;
    out.add("vocab.json", vocab.to_json());
    out.add("source.csv", write_encounters(&source, &vocab)?);
    out.add("target.csv", write_encounters(&target, &vocab)?);
    out.add("semantic.emb.jsonl", semantic.to_text());
    out.add("onehot.emb.jsonl", one_hot.to_text());
    let seed = cfg.synth.seed;
    out.finish("synth", Some(seed), serde_json::to_value(&cfg)?)
}

struct Inputs {
    vocab: Vocabulary,
    table: EmbeddingTable,
    records: Vec<data::EncounterRecord>,
}

fn load_inputs(out: &mut Outputs, data_path: &Path, vocab_path: &Path, table_path: &Path) -> Result<Inputs> {
    let vocab = Vocabulary::from_json(&out.input(vocab_path)?)?;
    let table = EmbeddingTable::parse(&out.input(table_path)?)?;
    table.check_covers(&vocab)?;
    let records = parse_encounters(&out.input(data_path)?, &vocab)?;
    Ok(Inputs { vocab, table, records })
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = resolve_run_config(&args.flags)?;
    if let Some(f) = args.filters {
        cfg.filters = f;
    }
    if let Some(d) = args.dropout {
        cfg.dropout = d;
    }
    if let Some(f) = &args.freeze {
        cfg.train.freeze = FreezeMask::parse(f)?;
    }
    if cfg.train.freeze.is_full() {
        return Err(Error::TrainConfig(
            "freezing every layer leaves nothing to train; use `transfer --strategy direct` to share a model".into(),
        ));
    }
    if cfg.site.is_empty() {
        cfg.site = "local".into();
    }

    let mut out = Outputs::new(&args.out);
    let inputs = load_inputs(&mut out, &args.data, &args.vocab, &args.table)?;
    let split = DatasetSplit::new(&inputs.records, parse_cutoff(&cfg.cutoff)?, cfg.seed)?;
    let encoded = encode_split(&split, &inputs.vocab, &inputs.table)?;
    let model = CnnModel::init(cfg.filters, inputs.table.dimension(), cfg.dropout, cfg.seed)?;
    let (trained, history) = train(&model, &encoded.train, &encoded.validation, &cfg.train)?;

    let ckpt = Checkpoint::new(
        inputs.table.source_tag(),
        trained,
        Provenance {
            site: cfg.site.clone(),
            data_window: data_window(&split),
            seed: cfg.seed,
            strategy: None,
            parent: None,
            config: serde_json::to_value(&cfg)?,
        },
    )?;
    out.add("checkpoint.json", ckpt.to_text()?);
    out.add(
        "history.json",
        metadata_json(&RunMetadata {
            seed: cfg.seed,
            config: &cfg,
            train_size: encoded.train.len(),
            validation_size: encoded.validation.len(),
            history: Some(&history),
        })?,
    );
    out.finish("train", Some(cfg.seed), serde_json::to_value(&cfg)?)
}

pub fn cmd_transfer(args: &TransferArgs) -> Result<()> {
    let strategy = TransferStrategy::parse(&args.strategy)?;
    let mut cfg = resolve_run_config(&args.flags)?;
    cfg.train.freeze = strategy.freeze_mask();
    if cfg.site.is_empty() {
        cfg.site = "target".into();
    }

    let mut out = Outputs::new(&args.out);
    let source = Checkpoint::parse(&out.input(&args.checkpoint)?)?;
    cfg.filters = source.model.num_filters();
    cfg.dropout = source.model.dropout_rate();
    let vocab = Vocabulary::from_json(&out.input(&args.vocab)?)?;
    let table = EmbeddingTable::parse(&out.input(&args.table)?)?;
    source.check_table(&table)?;
    table.check_covers(&vocab)?;
    let records = parse_encounters(&out.input(&args.data)?, &vocab)?;
    let cutoff = parse_cutoff(&cfg.cutoff)?;

    let (model, history, split_sizes, window) = if strategy == TransferStrategy::DirectShare {
        let (model, _) = run_transfer(&source, strategy, &table, &[], &[], &cfg.train)?;
        (model, None, (0, 0), source.provenance.data_window.clone())
    } else {
        let split = DatasetSplit::new(&records, cutoff, cfg.seed)?;
        let enc = encode_split(&split, &vocab, &table)?;
        let (model, history) = run_transfer(&source, strategy, &table, &enc.train, &enc.validation, &cfg.train)?;
        (model, history, (enc.train.len(), enc.validation.len()), data_window(&split))
    };
    let (_, test) = split_by_date(&records, cutoff);
    let report = evaluate_model(&model, &test, &table, &vocab, strategy.scenario())?;

    let ckpt = Checkpoint::new(
        table.source_tag(),
        model,
        Provenance {
            site: cfg.site.clone(),
            data_window: window,
            seed: cfg.seed,
            strategy: Some(strategy),
            parent: Some(Box::new(source.provenance.clone())),
            config: serde_json::to_value(&cfg)?,
        },
    )?;
    out.add("checkpoint.json", ckpt.to_text()?);
    out.add(
        "history.json",
        metadata_json(&RunMetadata {
            seed: cfg.seed,
            config: &cfg,
            train_size: split_sizes.0,
            validation_size: split_sizes.1,
            history: history.as_ref(),
        })?,
    );
    out.add("report.json", report_json(std::slice::from_ref(&report))?);
    println!("{} {} AUROC {:.4}", table.source_tag(), report.scenario, report.auroc);
    let mut config = serde_json::to_value(&cfg)?;
    config["strategy"] = serde_json::to_value(strategy)?;
    out.finish("transfer", Some(cfg.seed), config)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let scenario: Scenario = serde_json::from_value(serde_json::Value::String(args.scenario.clone()))
        .map_err(|_| Error::Config(format!("unknown scenario {:?}", args.scenario)))?;
    let cutoff = parse_cutoff(args.cutoff.as_deref().unwrap_or(&data::format_date(default_cutoff())))?;
    let mut out = Outputs::new(&args.out);
    let ckpt = Checkpoint::parse(&out.input(&args.checkpoint)?)?;
    let inputs = load_inputs(&mut out, &args.data, &args.vocab, &args.table)?;
    ckpt.check_table(&inputs.table)?;
    let test = if args.all { inputs.records } else { split_by_date(&inputs.records, cutoff).1 };
    // Encoding up front surfaces missing vectors before scoring.
    encode_all(&test, &inputs.vocab, &inputs.table)?;
    let report = evaluate_model(&ckpt.model, &test, &inputs.table, &inputs.vocab, scenario)?;
    out.add("report.json", report_json(std::slice::from_ref(&report))?);
    println!("{} {} AUROC {:.4}", report.source_tag, report.scenario, report.auroc);
    out.finish(
        "eval",
        None,
        serde_json::json!({
            "scenario": scenario,
            "cutoff": data::format_date(cutoff),
            "all_records": args.all,
        }),
    )
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Onehot(a) => cmd_onehot(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Transfer(a) => cmd_transfer(a),
        Command::Eval(a) => cmd_eval(a),
    }
}
