//! Run configuration: named presets, optional TOML config files, and flag
//! overrides, merged in that order (preset < file < flags). Unknown keys in a
//! config file are rejected.

use std::path::Path;

use serde::Deserialize;

use inpatient2vec::corpus::{FilterConfig, SplitConfig};
use inpatient2vec::model::ModelConfig;
use inpatient2vec::tensor::AdamConfig;
use inpatient2vec::training::PretrainConfig;
use inpatient2vec::FinetuneConfig;

use crate::CliError;

/// Salts for deriving independent sub-seeds from the run seed with
/// [`inpatient2vec::training::mix_seed`]; one per randomized evaluation step.
pub const INTRUSION_SETS_SALT: u64 = 0x5E75_B11D;
pub const ORACLE_GUESS_SALT: u64 = 0x02AC_1E00;
pub const CONTROL_ORACLE_SALT: u64 = 0x02AC_1E01;
pub const LABEL_SHUFFLE_SALT: u64 = 0xC0A7_0501;
pub const WORKSHEET_SALT: u64 = 0x3077_F03D;
pub const KMEANS_SALT: u64 = 0x3EA9_0500;
pub const FAMILY_SHUFFLE_SALT: u64 = 0xFA01_1E5C;
pub const FREQ_BOOT_SALT: u64 = 0xF4E0_B007;

/// A named bundle of defaults for every stage of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Default, clap::ValueEnum)]
pub enum PresetName {
    /// Full-scale settings matching the original experiments (dim 384,
    /// 6 heads, 6 layers, learning rate 1e-4, admission filter 100..3000).
    Paper,
    /// Laptop-scale settings (dim 64, 4 heads, 2 layers, learning rate 1e-3,
    /// admission filter scaled to 25..750).
    #[default]
    Desk,
}

/// Fully resolved configuration for one run.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: ModelConfig,
    pub train: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub filter: FilterConfig,
    pub split: SplitConfig,
    pub seed: u64,
}

pub fn preset(name: PresetName) -> Resolved {
    match name {
        PresetName::Paper => Resolved {
            model: ModelConfig::paper(),
            train: PretrainConfig::default(),
            finetune: FinetuneConfig {
                epochs: 10,
                batch_size: 128,
                ..FinetuneConfig::default()
            },
            filter: FilterConfig::default(),
            split: SplitConfig::default(),
            seed: 0,
        },
        PresetName::Desk => {
            let adam = AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() };
            Resolved {
                model: ModelConfig::desk(),
                train: PretrainConfig { adam, ..PretrainConfig::default() },
                finetune: FinetuneConfig { adam, ..FinetuneConfig::default() },
                filter: FilterConfig {
                    min_diag_visits: 25,
                    max_diag_visits: 750,
                    ..FilterConfig::default()
                },
                split: SplitConfig::default(),
                seed: 0,
            }
        }
    }
}

/// Optional config file: every field optional, layered over the preset.
/// Tables mirror the library configs section by section.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub model: ModelSection,
    pub train: TrainSection,
    pub finetune: FinetuneSection,
    pub filter: FilterSection,
    pub split: SplitSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub embed_dim: Option<usize>,
    pub n_heads: Option<usize>,
    pub n_layers: Option<usize>,
    pub ff_dim: Option<usize>,
    pub lstm_hidden: Option<usize>,
    pub init_std: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamSection {
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub weight_decay: Option<f64>,
}

impl AdamSection {
    fn apply(&self, adam: &mut AdamConfig) {
        overlay(&mut adam.learning_rate, self.learning_rate);
        overlay(&mut adam.beta1, self.beta1);
        overlay(&mut adam.beta2, self.beta2);
        overlay(&mut adam.epsilon, self.epsilon);
        overlay(&mut adam.weight_decay, self.weight_decay);
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub diagnosis_as_activity: Option<bool>,
    pub pairwise_day_task: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub mask_rate: Option<f64>,
    pub next_day_sigmoid: Option<bool>,
    pub unmasked_day_reps: Option<bool>,
    pub threads: Option<usize>,
    pub adam: AdamSection,
    pub ablation: AblationSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub threads: Option<usize>,
    pub adam: AdamSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub min_los: Option<usize>,
    pub max_los: Option<usize>,
    pub min_diag_visits: Option<usize>,
    pub max_diag_visits: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train: Option<f64>,
    pub valid: Option<f64>,
    pub test: Option<f64>,
    pub seed: Option<u64>,
}

fn overlay<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn load_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
}

impl FileConfig {
    pub fn apply(&self, r: &mut Resolved) {
        overlay(&mut r.seed, self.seed);
        overlay(&mut r.model.embed_dim, self.model.embed_dim);
        overlay(&mut r.model.n_heads, self.model.n_heads);
        overlay(&mut r.model.n_layers, self.model.n_layers);
        overlay(&mut r.model.ff_dim, self.model.ff_dim);
        overlay(&mut r.model.lstm_hidden, self.model.lstm_hidden);
        overlay(&mut r.model.init_std, self.model.init_std);
        overlay(&mut r.train.epochs, self.train.epochs);
        overlay(&mut r.train.batch_size, self.train.batch_size);
        overlay(&mut r.train.mask_rate, self.train.mask_rate);
        overlay(&mut r.train.next_day_sigmoid, self.train.next_day_sigmoid);
        overlay(&mut r.train.unmasked_day_reps, self.train.unmasked_day_reps);
        overlay(&mut r.train.threads, self.train.threads);
        self.train.adam.apply(&mut r.train.adam);
        overlay(&mut r.train.ablation.diagnosis_as_activity, self.train.ablation.diagnosis_as_activity);
        overlay(&mut r.train.ablation.pairwise_day_task, self.train.ablation.pairwise_day_task);
        overlay(&mut r.finetune.epochs, self.finetune.epochs);
        overlay(&mut r.finetune.batch_size, self.finetune.batch_size);
        overlay(&mut r.finetune.threads, self.finetune.threads);
        self.finetune.adam.apply(&mut r.finetune.adam);
        overlay(&mut r.filter.min_los, self.filter.min_los);
        overlay(&mut r.filter.max_los, self.filter.max_los);
        overlay(&mut r.filter.min_diag_visits, self.filter.min_diag_visits);
        overlay(&mut r.filter.max_diag_visits, self.filter.max_diag_visits);
        overlay(&mut r.split.train, self.split.train);
        overlay(&mut r.split.valid, self.split.valid);
        overlay(&mut r.split.test, self.split.test);
        overlay(&mut r.split.seed, self.split.seed);
    }
}

/// Flag overrides shared by the training-flavored commands. Every field is
/// `None` unless the flag appeared on the command line.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct CommonOverrides {
    /// Configuration preset supplying every default.
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: PresetName,
    /// TOML config file layered over the preset (flags still win).
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Run seed; drives every random choice in the command.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (capped by the I2V_THREADS environment variable).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Admissions kept only when LOS >= this many days.
    #[arg(long)]
    pub min_los: Option<usize>,
    /// Admissions kept only when LOS <= this many days.
    #[arg(long)]
    pub max_los: Option<usize>,
    /// Keep diagnoses with at least this many admissions (after LOS filter).
    #[arg(long)]
    pub min_diag_visits: Option<usize>,
    /// Keep diagnoses with at most this many admissions (after LOS filter).
    #[arg(long)]
    pub max_diag_visits: Option<usize>,
}

impl CommonOverrides {
    /// Preset -> config file -> flags, in increasing precedence.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let mut r = preset(self.preset);
        let file = match &self.config {
            Some(path) => Some(load_file_config(path)?),
            None => None,
        };
        if let Some(f) = &file {
            f.apply(&mut r);
        }
        overlay(&mut r.seed, self.seed);
        overlay(&mut r.filter.min_los, self.min_los);
        overlay(&mut r.filter.max_los, self.max_los);
        overlay(&mut r.filter.min_diag_visits, self.min_diag_visits);
        overlay(&mut r.filter.max_diag_visits, self.max_diag_visits);
        let threads = resolve_threads(self.threads);
        r.train.threads = threads;
        r.finetune.threads = threads;
        // One run seed drives both training stages. The split follows it too
        // unless the config file pinned a dedicated [split] seed.
        r.train.seed = r.seed;
        r.finetune.seed = r.seed;
        r.split.seed = file.as_ref().and_then(|f| f.split.seed).unwrap_or(r.seed);
        Ok(r)
    }
}

/// Effective worker thread count: the `--threads` flag if given, else the
/// `I2V_THREADS` environment variable, else 1. The environment variable also
/// acts as a cap on the flag, so one setting can throttle a whole pipeline.
pub fn resolve_threads(flag: Option<usize>) -> usize {
    let env_cap = std::env::var("I2V_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&t| t > 0);
    match (flag, env_cap) {
        (Some(f), Some(cap)) => f.max(1).min(cap),
        (Some(f), None) => f.max(1),
        (None, Some(cap)) => cap,
        (None, None) => 1,
    }
}
