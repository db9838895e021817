//! `i2v` — command-line interface for the inpatient2vec library.
//!
//! Subcommands cover the whole pipeline: generate a synthetic cohort, report
//! its statistics, pretrain, fine-tune, evaluate, query nearest neighbors,
//! and export embeddings. Every command is deterministic given its flags;
//! exit codes are 0 (success), 2 (usage or input error), 3 (checkpoint and
//! cohort incompatible), 4 (numerical divergence).

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use inpatient2vec::corpus::CorpusError;
use inpatient2vec::eval::EvalError;
use inpatient2vec::training::TrainError;

use config::CommonOverrides;

/// An error carrying the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    /// Usage, validation, or input-data problem: exit code 2.
    pub fn usage(message: impl Into<String>) -> CliError {
        CliError { code: 2, message: message.into() }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> CliError {
        CliError::usage(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> CliError {
        let code = match &e {
            TrainError::Diverged { .. } | TrainError::Tensor(_) => 4,
            TrainError::DigestMismatch { .. } | TrainError::VocabularyMismatch => 3,
            _ => 2,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> CliError {
        match e {
            EvalError::Train(inner) => inner.into(),
            other => CliError::usage(other.to_string()),
        }
    }
}

impl From<inpatient2vec::model::ModelError> for CliError {
    fn from(e: inpatient2vec::model::ModelError) -> CliError {
        CliError::usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::usage(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> CliError {
        CliError::usage(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "i2v",
    version,
    about = "Day-level representation learning for inpatient visit data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort with ground-truth structure.
    Synth(SynthArgs),
    /// Print descriptive statistics for a cohort file.
    Stats(StatsArgs),
    /// Pretrain a model on a cohort (filter, split, train, checkpoint).
    Pretrain(PretrainArgs),
    /// Fine-tune a pretrained checkpoint for a downstream task.
    Finetune(FinetuneArgs),
    /// Evaluate a checkpoint: intrusion, clustering, recall, remaining LOS.
    Eval(EvalArgs),
    /// List the nearest activities to a code in embedding space.
    Nearest(NearestArgs),
    /// Export embeddings as TSV.
    Export(ExportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Directory that receives cohort.jsonl and ground_truth.json.
    #[arg(long, default_value = "i2v-data")]
    out_dir: PathBuf,
    /// JSON file holding a full synthetic spec; the count flags below are
    /// then ignored (--seed still overrides the spec's seed).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    visits: usize,
    #[arg(long, default_value_t = 200)]
    activities: usize,
    /// Ground-truth activity clusters.
    #[arg(long, default_value_t = 10)]
    clusters: usize,
    #[arg(long, default_value_t = 20)]
    diagnoses: usize,
    /// Ground-truth diagnosis families.
    #[arg(long, default_value_t = 5)]
    families: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct StatsArgs {
    /// Cohort file (JSONL).
    cohort: PathBuf,
    /// Emit JSON instead of the text table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PretrainArgs {
    /// Cohort file (JSONL).
    #[arg(long)]
    cohort: PathBuf,
    /// Directory that receives checkpoint.bin and training_log.csv.
    #[arg(long, default_value = "i2v-run")]
    out_dir: PathBuf,
    #[command(flatten)]
    common: CommonOverrides,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, alias = "lr")]
    learning_rate: Option<f64>,
    /// Fraction of activity tokens hidden for masked recovery.
    #[arg(long)]
    mask_rate: Option<f64>,
    /// Embedding width.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    ff_dim: Option<usize>,
    #[arg(long)]
    lstm_hidden: Option<usize>,
    /// Architecture/task ablations (comma-separated).
    #[arg(long, value_enum, value_delimiter = ',')]
    ablation: Vec<AblationFlag>,
    /// Train next-day with per-activity sigmoids instead of softmax.
    #[arg(long)]
    next_day_sigmoid: bool,
    /// Recompute prefix-encoder inputs from unmasked days.
    #[arg(long)]
    unmasked_day_reps: bool,
}

#[derive(Clone, Copy, PartialEq, clap::ValueEnum)]
enum AblationFlag {
    /// Drop day-indexed diagnosis matrices; diagnosis becomes a day token.
    DiagAsActivity,
    /// Replace next-day prediction with pairwise consecutive-day ordering.
    PairwiseDay,
}

#[derive(Clone, Copy, PartialEq, clap::ValueEnum)]
enum TaskFlag {
    /// Predict the next day's activity set.
    NextDay,
    /// Predict remaining length of stay.
    Los,
}

#[derive(Clone, Copy, PartialEq, clap::ValueEnum)]
enum InitFlag {
    /// Initialize the predictor from the pretrained checkpoint.
    Pretrained,
    /// Control arm: identical architecture, fresh random weights.
    Random,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Cohort file; filtered and split exactly like the pretraining run.
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long, value_enum)]
    task: TaskFlag,
    #[arg(long, value_enum, default_value = "pretrained")]
    init: InitFlag,
    /// Directory that receives finetune_report.json.
    #[arg(long, default_value = "i2v-run")]
    out_dir: PathBuf,
    #[command(flatten)]
    common: CommonOverrides,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, alias = "lr")]
    learning_rate: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum EvalTask {
    Intrusion,
    Cluster,
    Recall,
    Los,
}

#[derive(Clone, Copy, PartialEq, clap::ValueEnum)]
enum EmbeddingSource {
    /// Rows of the activity embedding table.
    Raw,
    /// Mean encoder output per activity over its occurrences in the cohort.
    Contextual,
}

#[derive(Clone, Copy, PartialEq, clap::ValueEnum)]
enum DiagModeFlag {
    /// Mean over the day-indexed rows (default).
    DayMean,
    /// First day-indexed row only.
    FirstDay,
    /// All rows concatenated, zero-padded to the widest diagnosis.
    FlattenPad,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Cohort file; filtered and split exactly like the pretraining run.
    #[arg(long)]
    cohort: PathBuf,
    /// Ground-truth file from `i2v synth`. Without it the intrusion task
    /// only writes annotation worksheets and cluster NMI is unavailable.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Comma-separated task list; default runs all four.
    #[arg(long, value_enum, value_delimiter = ',')]
    tasks: Option<Vec<EvalTask>>,
    /// Directory that receives report.json, report.txt and worksheets.
    #[arg(long, default_value = "i2v-eval")]
    out_dir: PathBuf,
    #[command(flatten)]
    common: CommonOverrides,
    /// Number of intrusion sets.
    #[arg(long, default_value_t = 500)]
    n_sets: usize,
    /// Which activity vectors the intrusion task measures.
    #[arg(long, value_enum, default_value = "raw")]
    embedding_source: EmbeddingSource,
    /// Reduction from day-indexed diagnosis matrices to vectors.
    #[arg(long, value_enum, default_value = "day-mean")]
    diag_mode: DiagModeFlag,
    /// k for diagnosis k-means; defaults to the number of ground-truth
    /// families present in the vocabulary.
    #[arg(long)]
    k: Option<usize>,
    /// Fine-tuning epochs for the recall/LOS arms.
    #[arg(long)]
    finetune_epochs: Option<usize>,
    #[arg(long)]
    finetune_lr: Option<f64>,
    #[arg(long)]
    finetune_batch_size: Option<usize>,
}

#[derive(Args)]
struct NearestArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Activity code to query.
    code: String,
    #[arg(long, default_value_t = 5)]
    k: usize,
}

#[derive(Clone, Copy, PartialEq, clap::ValueEnum)]
enum ExportWhat {
    /// One row per activity code.
    Activities,
    /// Per diagnosis: a day-mean row plus one row per day index.
    Diagnoses,
    /// One row per (visit, day) of a cohort; requires --cohort.
    Days,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output TSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    what: ExportWhat,
    /// Cohort file, required for --what days; filtered like pretraining.
    #[arg(long)]
    cohort: Option<PathBuf>,
    #[command(flatten)]
    common: CommonOverrides,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Stats(args) => commands::stats(args),
        Command::Pretrain(args) => commands::pretrain(args),
        Command::Finetune(args) => commands::finetune(args),
        Command::Eval(args) => commands::eval(args),
        Command::Nearest(args) => commands::nearest(args),
        Command::Export(args) => commands::export(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}
