//! Command-line front end: train, evaluate, corrupt labels, trace
//! validation errors back to suspect training evidence, sweep memory
//! sizes, and replay any finished run from its manifest.
//!
//! Every command resolves its settings the same way — flags first,
//! then an optional `key=value` config file, then built-in defaults —
//! and records the fully resolved settings, input digests, and output
//! paths in a `.manifest.json` next to its main output. `replay`
//! re-runs a command from such a manifest after checking that the
//! inputs are unchanged, which reproduces every output byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::data::{Dataset, PerturbationRecord};
use crate::embedding::{load_embeddings, Embedder, EmbedderKind};
use crate::error::{EvmemError, Result};
use crate::eval::{evaluate, EvalReport};
use crate::manifest::RunManifest;
use crate::model::{
    embed_dataset, load_model, save_loss_csv, save_model, train, TrainedModel, TrainingConfig,
};
use crate::tracing::{run_tracing_experiment, trace_with_model};

const DEFAULT_DIM: usize = 64;
const DEFAULT_CELLS: usize = 16;
const DEFAULT_EPSILON: f64 = 0.5;
const DEFAULT_LR: f64 = 0.1;
const DEFAULT_EPOCHS: usize = 20;
const DEFAULT_SEED: u64 = 7;
const DEFAULT_L2: f64 = 0.0;
const DEFAULT_FRACTION: f64 = 0.1;
const DEFAULT_K: &str = "1,3";
const DEFAULT_SWEEP_CELLS: &str = "2,16,32,64";

#[derive(Parser, Debug)]
#[command(
    name = "evmem",
    version,
    about = "Evidence-memory text classifier: train, evaluate, corrupt labels, \
             and trace errors back to training evidence."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes the model, its loss history, a memory
    /// snapshot, and a run manifest.
    Train(TrainArgs),
    /// Score a saved model on a dataset and write a JSON report.
    Eval(EvalArgs),
    /// Flip a fraction of a dataset's labels; writes the corrupted
    /// dataset and the flip record.
    Perturb(PerturbArgs),
    /// Corrupt, train, and trace validation errors back to suspect
    /// training instances (or trace with an existing model).
    Trace(TraceArgs),
    /// Train and evaluate once per memory size; writes per-size models
    /// and a CSV of scores.
    Sweep(SweepArgs),
    /// Re-run a finished command from its manifest after verifying
    /// that every input file is unchanged.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Default)]
struct TrainArgs {
    /// Training dataset (TSV).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Embedding dimension (with the file embedder it comes from the table).
    #[arg(long)]
    dim: Option<usize>,
    /// Number of memory cells.
    #[arg(long)]
    cells: Option<usize>,
    /// Gate ceiling in (0, 1].
    #[arg(long)]
    epsilon: Option<f64>,
    /// SGD learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Number of passes over the training data.
    #[arg(long)]
    epochs: Option<usize>,
    /// Master seed for initialization and shuffling.
    #[arg(long)]
    seed: Option<u64>,
    /// Embedding source: "hash" or "file".
    #[arg(long)]
    embedder: Option<EmbedderKind>,
    /// Embedding table (TSV); required with --embedder file.
    #[arg(long)]
    embedding_file: Option<PathBuf>,
    /// L2 penalty on the weight matrices.
    #[arg(long)]
    l2: Option<f64>,
    /// Where to write the model.
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value config file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct EvalArgs {
    /// Saved model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset to score (TSV).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Embedding table (TSV); required when the model uses the file embedder.
    #[arg(long)]
    embedding_file: Option<PathBuf>,
    /// Where to write the JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value config file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct PerturbArgs {
    /// Dataset to corrupt (TSV).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Fraction of labels to flip, in [0, 1].
    #[arg(long)]
    fraction: Option<f64>,
    /// Seed for choosing which labels flip.
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the corrupted dataset.
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value config file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct TraceArgs {
    /// Training dataset (TSV). With --model, this must be the corrupted
    /// dataset the record belongs to.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Validation dataset (TSV) whose errors are traced.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Embedding dimension (with the file embedder it comes from the table).
    #[arg(long)]
    dim: Option<usize>,
    /// Number of memory cells.
    #[arg(long)]
    cells: Option<usize>,
    /// Gate ceiling in (0, 1].
    #[arg(long)]
    epsilon: Option<f64>,
    /// SGD learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Number of passes over the training data.
    #[arg(long)]
    epochs: Option<usize>,
    /// Master seed for the whole experiment.
    #[arg(long)]
    seed: Option<u64>,
    /// Embedding source: "hash" or "file".
    #[arg(long)]
    embedder: Option<EmbedderKind>,
    /// Embedding table (TSV); required with --embedder file.
    #[arg(long)]
    embedding_file: Option<PathBuf>,
    /// L2 penalty on the weight matrices.
    #[arg(long)]
    l2: Option<f64>,
    /// Fraction of training labels to flip before training.
    #[arg(long)]
    fraction: Option<f64>,
    /// Comma-separated trace depths, e.g. "1,3".
    #[arg(long)]
    k: Option<String>,
    /// Where to write the JSON report (a .txt companion sits next to it).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trace with this saved model instead of training one; requires
    /// --record and skips corruption and training.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Flip record produced by `perturb`; required with --model.
    #[arg(long)]
    record: Option<PathBuf>,
    /// key=value config file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct SweepArgs {
    /// Training dataset (TSV).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Evaluation dataset (TSV).
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Comma-separated memory sizes to try, e.g. "2,16,32,64".
    #[arg(long)]
    cells: Option<String>,
    /// Embedding dimension (with the file embedder it comes from the table).
    #[arg(long)]
    dim: Option<usize>,
    /// Gate ceiling in (0, 1].
    #[arg(long)]
    epsilon: Option<f64>,
    /// SGD learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Number of passes over the training data.
    #[arg(long)]
    epochs: Option<usize>,
    /// Master seed shared by every run of the sweep.
    #[arg(long)]
    seed: Option<u64>,
    /// Embedding source: "hash" or "file".
    #[arg(long)]
    embedder: Option<EmbedderKind>,
    /// Embedding table (TSV); required with --embedder file.
    #[arg(long)]
    embedding_file: Option<PathBuf>,
    /// L2 penalty on the weight matrices.
    #[arg(long)]
    l2: Option<f64>,
    /// Directory for the per-size models and sweep.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value config file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Manifest written by a previous run.
    #[arg(long)]
    manifest: PathBuf,
}

/// Entry point behind `main`: parses, dispatches, and maps errors to
/// exit codes — 0 success, 1 usage/config/data errors, 2 numeric
/// divergence during training.
pub fn run() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version land here too; only real usage
            // errors (which clap routes to stderr) fail the process.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            if matches!(err, EvmemError::Numeric { .. }) {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => cmd_train(&TrainSettings::resolve(&args)?),
        Command::Eval(args) => cmd_eval(&EvalSettings::resolve(&args)?),
        Command::Perturb(args) => cmd_perturb(&PerturbSettings::resolve(&args)?),
        Command::Trace(args) => cmd_trace(&TraceSettings::resolve(&args)?),
        Command::Sweep(args) => cmd_sweep(&SweepSettings::resolve(&args)?),
        Command::Replay(args) => cmd_replay(&args),
    }
}

// ---------------------------------------------------------------------------
// Config-file layering

/// Keys accepted in a config file — the union over all commands, so one
/// file can serve several commands; each command reads only its own.
const KNOWN_KEYS: &[&str] = &[
    "cells", "data", "dev", "dim", "embedder", "embedding-file", "epochs", "epsilon", "fraction",
    "k", "l2", "lr", "model", "out", "record", "seed",
];

/// Settings read from a `key=value` config file.
#[derive(Debug)]
struct FileSettings {
    values: BTreeMap<String, String>,
}

impl FileSettings {
    fn empty() -> Self {
        FileSettings { values: BTreeMap::new() }
    }

    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::empty());
        };
        let display = path.display().to_string();
        let text =
            fs::read_to_string(path).map_err(|e| EvmemError::io(display.clone(), e))?;
        let mut values = BTreeMap::new();
        for (index, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(EvmemError::format(
                    display,
                    index + 1,
                    format!("expected key=value, got {line:?}"),
                ));
            };
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(EvmemError::format(
                    display,
                    index + 1,
                    format!("unknown config key {key:?}"),
                ));
            }
            if values.insert(key.to_owned(), value.to_owned()).is_some() {
                return Err(EvmemError::format(
                    display,
                    index + 1,
                    format!("duplicate config key {key:?}"),
                ));
            }
        }
        Ok(FileSettings { values })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

fn parse_key<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| {
        EvmemError::Config(format!("config key `{key}` has unusable value {raw:?}"))
    })
}

/// Flag beats config file beats default.
fn resolve<T: std::str::FromStr>(
    flag: Option<T>,
    file: &FileSettings,
    key: &str,
    default: T,
) -> Result<T> {
    Ok(resolve_opt(flag, file, key)?.unwrap_or(default))
}

fn resolve_opt<T: std::str::FromStr>(
    flag: Option<T>,
    file: &FileSettings,
    key: &str,
) -> Result<Option<T>> {
    match flag {
        Some(value) => Ok(Some(value)),
        None => file.get(key).map(|raw| parse_key(key, raw)).transpose(),
    }
}

fn resolve_required<T: std::str::FromStr>(
    flag: Option<T>,
    file: &FileSettings,
    key: &str,
) -> Result<T> {
    resolve_opt(flag, file, key)?.ok_or_else(|| {
        EvmemError::Config(format!("`--{key}` is required (as a flag or config-file key)"))
    })
}

/// Splits a comma-separated list of positive counts, e.g. "1,3".
fn parse_count_list(raw: &str, what: &str) -> Result<Vec<usize>> {
    let mut values = Vec::new();
    for part in raw.split(',') {
        let part = part.trim();
        let value: usize = part.parse().map_err(|_| {
            EvmemError::Config(format!("{what} list has a non-numeric entry {part:?}"))
        })?;
        values.push(value);
    }
    Ok(values)
}

fn join_counts(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

// ---------------------------------------------------------------------------
// Resolved settings, one struct per command

#[derive(Debug, Clone)]
struct TrainSettings {
    data: PathBuf,
    /// `None` means "take the dimension from the embedding table".
    dim: Option<usize>,
    cells: usize,
    epsilon: f64,
    lr: f64,
    epochs: usize,
    seed: u64,
    embedder: EmbedderKind,
    embedding_file: Option<PathBuf>,
    l2: f64,
    out: PathBuf,
}

impl TrainSettings {
    fn resolve(args: &TrainArgs) -> Result<Self> {
        let file = FileSettings::load(args.config.as_deref())?;
        let embedder = resolve(args.embedder, &file, "embedder", EmbedderKind::Hash)?;
        let dim = resolve_opt(args.dim, &file, "dim")?;
        Ok(TrainSettings {
            data: resolve_required(args.data.clone(), &file, "data")?,
            dim: finalize_dim(embedder, dim),
            cells: resolve(args.cells, &file, "cells", DEFAULT_CELLS)?,
            epsilon: resolve(args.epsilon, &file, "epsilon", DEFAULT_EPSILON)?,
            lr: resolve(args.lr, &file, "lr", DEFAULT_LR)?,
            epochs: resolve(args.epochs, &file, "epochs", DEFAULT_EPOCHS)?,
            seed: resolve(args.seed, &file, "seed", DEFAULT_SEED)?,
            embedder,
            embedding_file: resolve_opt(args.embedding_file.clone(), &file, "embedding-file")?,
            l2: resolve(args.l2, &file, "l2", DEFAULT_L2)?,
            out: resolve_required(args.out.clone(), &file, "out")?,
        })
    }

    fn to_map(&self, final_dim: usize) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        map.insert("data".into(), self.data.display().to_string());
        map.insert("dim".into(), final_dim.to_string());
        map.insert("cells".into(), self.cells.to_string());
        map.insert("epsilon".into(), self.epsilon.to_string());
        map.insert("lr".into(), self.lr.to_string());
        map.insert("epochs".into(), self.epochs.to_string());
        map.insert("seed".into(), self.seed.to_string());
        map.insert("embedder".into(), self.embedder.as_str().to_owned());
        if let Some(path) = &self.embedding_file {
            map.insert("embedding-file".into(), path.display().to_string());
        }
        map.insert("l2".into(), self.l2.to_string());
        map.insert("out".into(), self.out.display().to_string());
        map
    }

    fn from_manifest(manifest: &RunManifest) -> Result<Self> {
        Ok(TrainSettings {
            data: manifest.config_value("data")?,
            dim: manifest.config_opt("dim")?,
            cells: manifest.config_value("cells")?,
            epsilon: manifest.config_value("epsilon")?,
            lr: manifest.config_value("lr")?,
            epochs: manifest.config_value("epochs")?,
            seed: manifest.config_value("seed")?,
            embedder: manifest.config_value("embedder")?,
            embedding_file: manifest.config_opt("embedding-file")?,
            l2: manifest.config_value("l2")?,
            out: manifest.config_value("out")?,
        })
    }
}

#[derive(Debug, Clone)]
struct EvalSettings {
    model: PathBuf,
    data: PathBuf,
    embedding_file: Option<PathBuf>,
    out: PathBuf,
}

impl EvalSettings {
    fn resolve(args: &EvalArgs) -> Result<Self> {
        let file = FileSettings::load(args.config.as_deref())?;
        Ok(EvalSettings {
            model: resolve_required(args.model.clone(), &file, "model")?,
            data: resolve_required(args.data.clone(), &file, "data")?,
            embedding_file: resolve_opt(args.embedding_file.clone(), &file, "embedding-file")?,
            out: resolve_required(args.out.clone(), &file, "out")?,
        })
    }

    fn to_map(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        map.insert("model".into(), self.model.display().to_string());
        map.insert("data".into(), self.data.display().to_string());
        if let Some(path) = &self.embedding_file {
            map.insert("embedding-file".into(), path.display().to_string());
        }
        map.insert("out".into(), self.out.display().to_string());
        map
    }

    fn from_manifest(manifest: &RunManifest) -> Result<Self> {
        Ok(EvalSettings {
            model: manifest.config_value("model")?,
            data: manifest.config_value("data")?,
            embedding_file: manifest.config_opt("embedding-file")?,
            out: manifest.config_value("out")?,
        })
    }
}

#[derive(Debug, Clone)]
struct PerturbSettings {
    data: PathBuf,
    fraction: f64,
    seed: u64,
    out: PathBuf,
}

impl PerturbSettings {
    fn resolve(args: &PerturbArgs) -> Result<Self> {
        let file = FileSettings::load(args.config.as_deref())?;
        Ok(PerturbSettings {
            data: resolve_required(args.data.clone(), &file, "data")?,
            fraction: resolve(args.fraction, &file, "fraction", DEFAULT_FRACTION)?,
            seed: resolve(args.seed, &file, "seed", DEFAULT_SEED)?,
            out: resolve_required(args.out.clone(), &file, "out")?,
        })
    }

    fn to_map(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        map.insert("data".into(), self.data.display().to_string());
        map.insert("fraction".into(), self.fraction.to_string());
        map.insert("seed".into(), self.seed.to_string());
        map.insert("out".into(), self.out.display().to_string());
        map
    }

    fn from_manifest(manifest: &RunManifest) -> Result<Self> {
        Ok(PerturbSettings {
            data: manifest.config_value("data")?,
            fraction: manifest.config_value("fraction")?,
            seed: manifest.config_value("seed")?,
            out: manifest.config_value("out")?,
        })
    }
}

/// `trace` has two shapes: corrupt-train-trace from scratch, or trace
/// an existing model against an existing flip record.
#[derive(Debug, Clone)]
enum TraceSettings {
    Fresh(TraceFreshSettings),
    Saved(TraceSavedSettings),
}

#[derive(Debug, Clone)]
struct TraceFreshSettings {
    data: PathBuf,
    dev: PathBuf,
    dim: Option<usize>,
    cells: usize,
    epsilon: f64,
    lr: f64,
    epochs: usize,
    seed: u64,
    embedder: EmbedderKind,
    embedding_file: Option<PathBuf>,
    l2: f64,
    fraction: f64,
    k: Vec<usize>,
    out: PathBuf,
}

#[derive(Debug, Clone)]
struct TraceSavedSettings {
    data: PathBuf,
    dev: PathBuf,
    model: PathBuf,
    record: PathBuf,
    embedding_file: Option<PathBuf>,
    k: Vec<usize>,
    out: PathBuf,
}

impl TraceSettings {
    fn resolve(args: &TraceArgs) -> Result<Self> {
        let file = FileSettings::load(args.config.as_deref())?;
        let k_raw: String = resolve(args.k.clone(), &file, "k", DEFAULT_K.to_owned())?;
        let k = parse_count_list(&k_raw, "trace depth")?;
        let data = resolve_required(args.data.clone(), &file, "data")?;
        let dev = resolve_required(args.dev.clone(), &file, "dev")?;
        let embedding_file = resolve_opt(args.embedding_file.clone(), &file, "embedding-file")?;
        let out = resolve_required(args.out.clone(), &file, "out")?;

        // Only an explicit --model flag selects the saved-model shape;
        // a `model` key in a shared config file does not.
        if let Some(model) = args.model.clone() {
            if args.fraction.is_some() {
                return Err(EvmemError::Config(
                    "--fraction cannot be combined with --model; the corruption \
                     fraction comes from the record"
                        .into(),
                ));
            }
            let record = resolve_required(args.record.clone(), &file, "record").map_err(|_| {
                EvmemError::Config("--record is required with --model".into())
            })?;
            return Ok(TraceSettings::Saved(TraceSavedSettings {
                data,
                dev,
                model,
                record,
                embedding_file,
                k,
                out,
            }));
        }
        if args.record.is_some() {
            return Err(EvmemError::Config("--record requires --model".into()));
        }

        let embedder = resolve(args.embedder, &file, "embedder", EmbedderKind::Hash)?;
        let dim = resolve_opt(args.dim, &file, "dim")?;
        Ok(TraceSettings::Fresh(TraceFreshSettings {
            data,
            dev,
            dim: finalize_dim(embedder, dim),
            cells: resolve(args.cells, &file, "cells", DEFAULT_CELLS)?,
            epsilon: resolve(args.epsilon, &file, "epsilon", DEFAULT_EPSILON)?,
            lr: resolve(args.lr, &file, "lr", DEFAULT_LR)?,
            epochs: resolve(args.epochs, &file, "epochs", DEFAULT_EPOCHS)?,
            seed: resolve(args.seed, &file, "seed", DEFAULT_SEED)?,
            embedder,
            embedding_file,
            l2: resolve(args.l2, &file, "l2", DEFAULT_L2)?,
            fraction: resolve(args.fraction, &file, "fraction", DEFAULT_FRACTION)?,
            k,
            out,
        }))
    }

    fn from_manifest(manifest: &RunManifest) -> Result<Self> {
        let k = parse_count_list(&manifest.config_value::<String>("k")?, "trace depth")?;
        if manifest.config.contains_key("model") {
            return Ok(TraceSettings::Saved(TraceSavedSettings {
                data: manifest.config_value("data")?,
                dev: manifest.config_value("dev")?,
                model: manifest.config_value("model")?,
                record: manifest.config_value("record")?,
                embedding_file: manifest.config_opt("embedding-file")?,
                k,
                out: manifest.config_value("out")?,
            }));
        }
        Ok(TraceSettings::Fresh(TraceFreshSettings {
            data: manifest.config_value("data")?,
            dev: manifest.config_value("dev")?,
            dim: manifest.config_opt("dim")?,
            cells: manifest.config_value("cells")?,
            epsilon: manifest.config_value("epsilon")?,
            lr: manifest.config_value("lr")?,
            epochs: manifest.config_value("epochs")?,
            seed: manifest.config_value("seed")?,
            embedder: manifest.config_value("embedder")?,
            embedding_file: manifest.config_opt("embedding-file")?,
            l2: manifest.config_value("l2")?,
            fraction: manifest.config_value("fraction")?,
            k,
            out: manifest.config_value("out")?,
        }))
    }
}

impl TraceFreshSettings {
    fn to_map(&self, final_dim: usize) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        map.insert("data".into(), self.data.display().to_string());
        map.insert("dev".into(), self.dev.display().to_string());
        map.insert("dim".into(), final_dim.to_string());
        map.insert("cells".into(), self.cells.to_string());
        map.insert("epsilon".into(), self.epsilon.to_string());
        map.insert("lr".into(), self.lr.to_string());
        map.insert("epochs".into(), self.epochs.to_string());
        map.insert("seed".into(), self.seed.to_string());
        map.insert("embedder".into(), self.embedder.as_str().to_owned());
        if let Some(path) = &self.embedding_file {
            map.insert("embedding-file".into(), path.display().to_string());
        }
        map.insert("l2".into(), self.l2.to_string());
        map.insert("fraction".into(), self.fraction.to_string());
        map.insert("k".into(), join_counts(&self.k));
        map.insert("out".into(), self.out.display().to_string());
        map
    }
}

impl TraceSavedSettings {
    fn to_map(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        map.insert("data".into(), self.data.display().to_string());
        map.insert("dev".into(), self.dev.display().to_string());
        map.insert("model".into(), self.model.display().to_string());
        map.insert("record".into(), self.record.display().to_string());
        if let Some(path) = &self.embedding_file {
            map.insert("embedding-file".into(), path.display().to_string());
        }
        map.insert("k".into(), join_counts(&self.k));
        map.insert("out".into(), self.out.display().to_string());
        map
    }
}

#[derive(Debug, Clone)]
struct SweepSettings {
    data: PathBuf,
    dev: PathBuf,
    cells: Vec<usize>,
    dim: Option<usize>,
    epsilon: f64,
    lr: f64,
    epochs: usize,
    seed: u64,
    embedder: EmbedderKind,
    embedding_file: Option<PathBuf>,
    l2: f64,
    out: PathBuf,
}

impl SweepSettings {
    fn resolve(args: &SweepArgs) -> Result<Self> {
        let file = FileSettings::load(args.config.as_deref())?;
        let cells_raw: String =
            resolve(args.cells.clone(), &file, "cells", DEFAULT_SWEEP_CELLS.to_owned())?;
        let embedder = resolve(args.embedder, &file, "embedder", EmbedderKind::Hash)?;
        let dim = resolve_opt(args.dim, &file, "dim")?;
        Ok(SweepSettings {
            data: resolve_required(args.data.clone(), &file, "data")?,
            dev: resolve_required(args.dev.clone(), &file, "dev")?,
            cells: parse_count_list(&cells_raw, "memory size")?,
            dim: finalize_dim(embedder, dim),
            epsilon: resolve(args.epsilon, &file, "epsilon", DEFAULT_EPSILON)?,
            lr: resolve(args.lr, &file, "lr", DEFAULT_LR)?,
            epochs: resolve(args.epochs, &file, "epochs", DEFAULT_EPOCHS)?,
            seed: resolve(args.seed, &file, "seed", DEFAULT_SEED)?,
            embedder,
            embedding_file: resolve_opt(args.embedding_file.clone(), &file, "embedding-file")?,
            l2: resolve(args.l2, &file, "l2", DEFAULT_L2)?,
            out: resolve_required(args.out.clone(), &file, "out")?,
        })
    }

    fn to_map(&self, final_dim: usize) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        map.insert("data".into(), self.data.display().to_string());
        map.insert("dev".into(), self.dev.display().to_string());
        map.insert("cells".into(), join_counts(&self.cells));
        map.insert("dim".into(), final_dim.to_string());
        map.insert("epsilon".into(), self.epsilon.to_string());
        map.insert("lr".into(), self.lr.to_string());
        map.insert("epochs".into(), self.epochs.to_string());
        map.insert("seed".into(), self.seed.to_string());
        map.insert("embedder".into(), self.embedder.as_str().to_owned());
        if let Some(path) = &self.embedding_file {
            map.insert("embedding-file".into(), path.display().to_string());
        }
        map.insert("l2".into(), self.l2.to_string());
        map.insert("out".into(), self.out.display().to_string());
        map
    }

    fn from_manifest(manifest: &RunManifest) -> Result<Self> {
        Ok(SweepSettings {
            data: manifest.config_value("data")?,
            dev: manifest.config_value("dev")?,
            cells: parse_count_list(&manifest.config_value::<String>("cells")?, "memory size")?,
            dim: manifest.config_opt("dim")?,
            epsilon: manifest.config_value("epsilon")?,
            lr: manifest.config_value("lr")?,
            epochs: manifest.config_value("epochs")?,
            seed: manifest.config_value("seed")?,
            embedder: manifest.config_value("embedder")?,
            embedding_file: manifest.config_opt("embedding-file")?,
            l2: manifest.config_value("l2")?,
            out: manifest.config_value("out")?,
        })
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing

/// With the hash embedder the dimension is known without IO, so pin it
/// here; with the file embedder it stays open until the table is read.
fn finalize_dim(kind: EmbedderKind, explicit: Option<usize>) -> Option<usize> {
    match kind {
        EmbedderKind::Hash => Some(explicit.unwrap_or(DEFAULT_DIM)),
        EmbedderKind::File => explicit,
    }
}

/// Builds the embedder and settles the final dimension. An explicit
/// dimension that disagrees with a loaded table is a config error.
fn build_embedder(
    kind: EmbedderKind,
    explicit_dim: Option<usize>,
    seed: u64,
    table: Option<&Path>,
) -> Result<(Embedder, usize)> {
    match kind {
        EmbedderKind::Hash => {
            let dim = explicit_dim.unwrap_or(DEFAULT_DIM);
            Ok((Embedder::Hash { dim, seed }, dim))
        }
        EmbedderKind::File => {
            let path = table.ok_or_else(|| {
                EvmemError::Config("--embedding-file is required with the file embedder".into())
            })?;
            let store = load_embeddings(path)?;
            let dim = store.dim();
            if let Some(explicit) = explicit_dim {
                if explicit != dim {
                    return Err(EvmemError::Config(format!(
                        "--dim {explicit} conflicts with the embedding table's dimension {dim}"
                    )));
                }
            }
            Ok((Embedder::Store(store), dim))
        }
    }
}

/// The embedder a saved model was trained with, rebuilt for scoring.
fn embedder_for_model(model: &TrainedModel, table: Option<&Path>) -> Result<Embedder> {
    match model.config.embedder {
        EmbedderKind::Hash => {
            Ok(Embedder::Hash { dim: model.config.dim, seed: model.config.seed })
        }
        EmbedderKind::File => {
            let path = table.ok_or_else(|| {
                EvmemError::Config(
                    "the model was trained with the file embedder; pass --embedding-file".into(),
                )
            })?;
            let store = load_embeddings(path)?;
            if store.dim() != model.config.dim {
                return Err(EvmemError::Config(format!(
                    "embedding table dimension {} does not match the model's {}",
                    store.dim(),
                    model.config.dim
                )));
            }
            Ok(Embedder::Store(store))
        }
    }
}

/// `path` plus a literal suffix: `model.evmem` → `model.evmem.loss.csv`.
fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(suffix);
    PathBuf::from(os)
}

fn manifest_for(
    command: &str,
    config: BTreeMap<String, String>,
    seed: u64,
    started: Instant,
) -> RunManifest {
    RunManifest {
        command: command.to_owned(),
        config,
        inputs: Vec::new(),
        outputs: Vec::new(),
        duration_ms: started.elapsed().as_millis() as u64,
        seed,
    }
}

fn warn_dropped_questions(dropped: &[String]) {
    if !dropped.is_empty() {
        log::warn!(
            "dropped {} question(s) whose candidates all share one label; \
             ranking metrics are undefined for them",
            dropped.len()
        );
    }
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_train(settings: &TrainSettings) -> Result<()> {
    let started = Instant::now();
    let dataset = Dataset::load_tsv(&settings.data)?;
    let (embedder, dim) = build_embedder(
        settings.embedder,
        settings.dim,
        settings.seed,
        settings.embedding_file.as_deref(),
    )?;
    let embeddings = embed_dataset(&dataset, &embedder)?;
    let config = TrainingConfig {
        dim,
        cells: settings.cells,
        epsilon: settings.epsilon,
        learning_rate: settings.lr,
        epochs: settings.epochs,
        seed: settings.seed,
        embedder: settings.embedder,
        l2_penalty: settings.l2,
    };
    let run = train(&dataset, &embeddings, &config)?;

    save_model(&run.model, &settings.out)?;
    let loss_path = suffixed(&settings.out, ".loss.csv");
    save_loss_csv(&run.loss_history, &loss_path)?;
    let memory_path = suffixed(&settings.out, ".memory.tsv");
    run.model.bank.save_snapshot(&memory_path)?;

    let mut manifest = manifest_for("train", settings.to_map(dim), settings.seed, started);
    manifest.add_input(&settings.data)?;
    if let Some(table) = &settings.embedding_file {
        manifest.add_input(table)?;
    }
    manifest.add_output(&settings.out);
    manifest.add_output(&loss_path);
    manifest.add_output(&memory_path);
    manifest.save(&suffixed(&settings.out, ".manifest.json"))?;

    let last_epoch = settings.epochs - 1;
    let final_losses: Vec<f64> = run
        .loss_history
        .iter()
        .filter(|e| e.epoch == last_epoch)
        .map(|e| e.loss)
        .collect();
    let mean = final_losses.iter().sum::<f64>() / final_losses.len() as f64;
    println!(
        "trained on {} instances for {} epochs; final epoch mean loss {:.4}",
        dataset.len(),
        settings.epochs,
        mean
    );
    println!("model written to {}", settings.out.display());
    Ok(())
}

fn print_eval_table(report: &EvalReport) {
    println!("{:<9} {:>6}", "metric", "value");
    println!("{:<9} {:>6.3}", "MAP", report.map);
    println!("{:<9} {:>6.3}", "MRR", report.mrr);
    println!("{:<9} {:>6.3}", "accuracy", report.accuracy);
}

fn cmd_eval(settings: &EvalSettings) -> Result<()> {
    let started = Instant::now();
    let model = load_model(&settings.model)?;
    let dataset = Dataset::load_tsv(&settings.data)?;
    let (filtered, dropped) = dataset.filter_single_label_questions();
    warn_dropped_questions(&dropped);
    let embedder = embedder_for_model(&model, settings.embedding_file.as_deref())?;
    let embeddings = embed_dataset(&filtered, &embedder)?;
    let report = evaluate(&model, &filtered, &embeddings)?;

    report.save_json(&settings.out)?;
    let mut manifest = manifest_for("eval", settings.to_map(), model.config.seed, started);
    manifest.add_input(&settings.model)?;
    manifest.add_input(&settings.data)?;
    if let Some(table) = &settings.embedding_file {
        manifest.add_input(table)?;
    }
    manifest.add_output(&settings.out);
    manifest.save(&suffixed(&settings.out, ".manifest.json"))?;

    print_eval_table(&report);
    Ok(())
}

fn cmd_perturb(settings: &PerturbSettings) -> Result<()> {
    let started = Instant::now();
    let mut dataset = Dataset::load_tsv(&settings.data)?;
    let total = dataset.len();
    let record = dataset.perturb_labels(settings.fraction, settings.seed)?;
    dataset.save_tsv(&settings.out)?;
    let record_path = suffixed(&settings.out, ".record.tsv");
    record.save(&record_path)?;

    let mut manifest = manifest_for("perturb", settings.to_map(), settings.seed, started);
    manifest.add_input(&settings.data)?;
    manifest.add_output(&settings.out);
    manifest.add_output(&record_path);
    manifest.save(&suffixed(&settings.out, ".manifest.json"))?;

    println!(
        "flipped {} of {total} labels; corrupted dataset written to {}",
        record.entries.len(),
        settings.out.display()
    );
    Ok(())
}

fn cmd_trace(settings: &TraceSettings) -> Result<()> {
    let started = Instant::now();
    match settings {
        TraceSettings::Fresh(s) => {
            let training = Dataset::load_tsv(&s.data)?;
            let validation = Dataset::load_tsv(&s.dev)?;
            let (embedder, dim) =
                build_embedder(s.embedder, s.dim, s.seed, s.embedding_file.as_deref())?;
            let config = TrainingConfig {
                dim,
                cells: s.cells,
                epsilon: s.epsilon,
                learning_rate: s.lr,
                epochs: s.epochs,
                seed: s.seed,
                embedder: s.embedder,
                l2_penalty: s.l2,
            };
            let (report, _model) = run_tracing_experiment(
                &training,
                &validation,
                &embedder,
                &config,
                s.fraction,
                s.seed,
                &s.k,
            )?;

            let mut inputs = vec![s.data.as_path(), s.dev.as_path()];
            if let Some(table) = &s.embedding_file {
                inputs.push(table.as_path());
            }
            finish_trace(&report, &s.out, s.to_map(dim), s.seed, started, &inputs)
        }
        TraceSettings::Saved(s) => {
            let model = load_model(&s.model)?;
            let record = PerturbationRecord::load(&s.record)?;
            let training = Dataset::load_tsv(&s.data)?;
            let validation = Dataset::load_tsv(&s.dev)?;
            check_record_matches(&record, &training)?;

            let fraction = record.entries.len() as f64 / training.len() as f64;
            let embedder = embedder_for_model(&model, s.embedding_file.as_deref())?;
            let train_embeddings = embed_dataset(&training, &embedder)?;
            let val_embeddings = embed_dataset(&validation, &embedder)?;
            let perturbed: BTreeSet<String> =
                record.entries.iter().map(|e| e.instance_id.clone()).collect();
            let report = trace_with_model(
                &model,
                &training,
                &train_embeddings,
                &validation,
                &val_embeddings,
                &perturbed,
                fraction,
                &s.k,
            )?;

            let mut inputs =
                vec![s.data.as_path(), s.dev.as_path(), s.model.as_path(), s.record.as_path()];
            if let Some(table) = &s.embedding_file {
                inputs.push(table.as_path());
            }
            finish_trace(&report, &s.out, s.to_map(), model.config.seed, started, &inputs)
        }
    }
}

/// The flip record only makes sense against the corrupted dataset it
/// came from: every flipped id must exist there and carry its flipped
/// label. Anything else means the wrong file was passed.
fn check_record_matches(record: &PerturbationRecord, training: &Dataset) -> Result<()> {
    let labels: BTreeMap<&str, crate::data::Label> = training
        .instances()
        .iter()
        .map(|inst| (inst.instance_id.as_str(), inst.label))
        .collect();
    for entry in &record.entries {
        match labels.get(entry.instance_id.as_str()) {
            None => {
                return Err(EvmemError::Config(format!(
                    "the record flips {:?}, which is not in the training data; \
                     pass the corrupted dataset the record was made from",
                    entry.instance_id
                )))
            }
            Some(&label) if label != entry.new_label => {
                return Err(EvmemError::Config(format!(
                    "training data does not match the record: {:?} has label {label} \
                     but the record flipped it to {}",
                    entry.instance_id, entry.new_label
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

fn finish_trace(
    report: &crate::tracing::TraceReport,
    out: &Path,
    config: BTreeMap<String, String>,
    seed: u64,
    started: Instant,
    inputs: &[&Path],
) -> Result<()> {
    report.save_json(out)?;
    let text_path = suffixed(out, ".txt");
    report.save_text(&text_path)?;

    let mut manifest = manifest_for("trace", config, seed, started);
    for path in inputs {
        manifest.add_input(path)?;
    }
    manifest.add_output(out);
    manifest.add_output(&text_path);
    manifest.save(&suffixed(out, ".manifest.json"))?;

    println!(
        "{} validation error(s); report written to {}",
        report.error_count,
        out.display()
    );
    match &report.note {
        Some(note) => println!("note: {note}"),
        None => print!("{}", report.precision_table()),
    }
    Ok(())
}

fn cmd_sweep(settings: &SweepSettings) -> Result<()> {
    let started = Instant::now();
    let training = Dataset::load_tsv(&settings.data)?;
    let dev = Dataset::load_tsv(&settings.dev)?;
    let (dev, dropped) = dev.filter_single_label_questions();
    warn_dropped_questions(&dropped);
    let (embedder, dim) = build_embedder(
        settings.embedder,
        settings.dim,
        settings.seed,
        settings.embedding_file.as_deref(),
    )?;
    let train_embeddings = embed_dataset(&training, &embedder)?;
    let dev_embeddings = embed_dataset(&dev, &embedder)?;
    fs::create_dir_all(&settings.out)
        .map_err(|e| EvmemError::io(settings.out.display().to_string(), e))?;

    let mut model_paths = Vec::new();
    let mut rows: Vec<(usize, EvalReport)> = Vec::new();
    println!("{:>5}  {:>6}  {:>6}  {:>6}", "cells", "MAP", "MRR", "acc");
    for &cells in &settings.cells {
        let config = TrainingConfig {
            dim,
            cells,
            epsilon: settings.epsilon,
            learning_rate: settings.lr,
            epochs: settings.epochs,
            seed: settings.seed,
            embedder: settings.embedder,
            l2_penalty: settings.l2,
        };
        let run = train(&training, &train_embeddings, &config)?;
        let report = evaluate(&run.model, &dev, &dev_embeddings)?;
        let model_path = settings.out.join(format!("model_k{cells}.evmem"));
        save_model(&run.model, &model_path)?;
        println!(
            "{cells:>5}  {:>6.3}  {:>6.3}  {:>6.3}",
            report.map, report.mrr, report.accuracy
        );
        model_paths.push(model_path);
        rows.push((cells, report));
    }

    let csv_path = settings.out.join("sweep.csv");
    let mut csv = String::from("cells,map,mrr,accuracy\n");
    for (cells, report) in &rows {
        let _ = writeln!(csv, "{cells},{},{},{}", report.map, report.mrr, report.accuracy);
    }
    fs::write(&csv_path, csv).map_err(|e| EvmemError::io(csv_path.display().to_string(), e))?;

    let mut manifest = manifest_for("sweep", settings.to_map(dim), settings.seed, started);
    manifest.add_input(&settings.data)?;
    manifest.add_input(&settings.dev)?;
    if let Some(table) = &settings.embedding_file {
        manifest.add_input(table)?;
    }
    for path in &model_paths {
        manifest.add_output(path);
    }
    manifest.add_output(&csv_path);
    manifest.save(&settings.out.join("sweep.manifest.json"))?;
    Ok(())
}

fn cmd_replay(args: &ReplayArgs) -> Result<()> {
    let manifest = RunManifest::load(&args.manifest)?;
    manifest.verify_inputs()?;
    match manifest.command.as_str() {
        "train" => cmd_train(&TrainSettings::from_manifest(&manifest)?)?,
        "eval" => cmd_eval(&EvalSettings::from_manifest(&manifest)?)?,
        "perturb" => cmd_perturb(&PerturbSettings::from_manifest(&manifest)?)?,
        "trace" => cmd_trace(&TraceSettings::from_manifest(&manifest)?)?,
        "sweep" => cmd_sweep(&SweepSettings::from_manifest(&manifest)?)?,
        other => {
            return Err(EvmemError::Config(format!(
                "manifest records unknown command {other:?}"
            )))
        }
    }
    println!("replayed {} from {}", manifest.command, args.manifest.display());
    Ok(())
}
