//! Pretraining: masking plans, the two self-supervised losses, the training
//! loop, and binary checkpoints.

mod checkpoint;
mod losses;
mod pretrain;

pub use checkpoint::{load_checkpoint, save_checkpoint, write_log_csv, Checkpoint};
pub use losses::{
    batch_backward, eval_split, loss_masked, loss_next_day, loss_pairwise_days, total_loss,
    BatchLoss, ForwardSettings,
};
pub use pretrain::{pretrain, PretrainOutput};

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Cohort;
use crate::model::Ablation;
use crate::tensor::AdamConfig;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("masking rate {0} is outside (0, 1)")]
    BadRate(f64),
    #[error("cohort has no activity tokens to mask")]
    NoTokens,
    #[error("batch contains no masked tokens")]
    NoMaskedTokens,
    #[error("no visit in the batch is long enough for the task")]
    NoEligibleVisits,
    #[error("empty training split")]
    EmptySplit,
    #[error("training and validation splits use different vocabularies")]
    VocabularyMismatch,
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {what}")]
    Diverged { epoch: usize, batch: usize, what: String },
    #[error("model error: {0}")]
    Model(#[from] crate::model::ModelError),
    #[error("autodiff error: {0}")]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint metadata: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("vocabulary digest mismatch: checkpoint {checkpoint}, cohort {cohort}")]
    DigestMismatch { checkpoint: String, cohort: String },
}

/// Everything the pretraining loop needs besides the data and architecture.
/// Loss weighting between the two tasks is fixed at 1:1 and is not a knob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// Batch size in visits.
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub mask_rate: f64,
    pub seed: u64,
    pub ablation: Ablation,
    /// Next-day target: `false` trains against the normalized multi-hot with
    /// softmax cross-entropy; `true` switches to independent per-activity
    /// sigmoid binary cross-entropy.
    pub next_day_sigmoid: bool,
    /// When `true`, day representations fed to the prefix encoder are
    /// recomputed from unmasked inputs; by default the masked pass is reused
    /// for both tasks.
    pub unmasked_day_reps: bool,
    /// Worker threads for per-visit loss evaluation. Results are identical
    /// for every value; this is purely a wall-clock knob.
    pub threads: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 10,
            batch_size: 32,
            adam: AdamConfig::default(),
            mask_rate: 0.15,
            seed: 0,
            ablation: Ablation::default(),
            next_day_sigmoid: false,
            unmasked_day_reps: false,
            threads: 1,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(TrainError::BadRate(self.mask_rate));
        }
        if self.threads == 0 {
            return Err(TrainError::InvalidConfig("threads must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the training log (also the CSV schema). `mask_loss` and
/// `next_loss` are the validation-split components of `valid_loss`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub mask_loss: f64,
    pub next_loss: f64,
}

/// splitmix64-style finalizer used to derive independent seeds from the run
/// seed (batch order, validation plan, pairwise sampling). Public so callers
/// orchestrating several seeded stages can derive disjoint sub-seeds from one
/// run seed the same way the library does internally.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) const VALID_PLAN_SALT: u64 = 0x7641_1D00;
pub(crate) const BATCH_ORDER_SALT: u64 = 0xBA7C_0D0E;
pub(crate) const PAIRWISE_SALT: u64 = 0x9A12_57A5;

/// Which (visit, day, position) activity tokens are masked, drawn uniformly
/// without replacement over the whole cohort at the given rate, subject to
/// the constraint that no day loses all of its activities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskingPlan {
    seed: u64,
    /// `(visit index, day index) → masked 0-based positions` — absent keys
    /// have no masks.
    masks: BTreeMap<(usize, usize), BTreeSet<usize>>,
    /// Masked-token count per visit index (for batch weighting).
    per_visit: BTreeMap<usize, usize>,
    n_masked: usize,
    total_tokens: usize,
}

impl MaskingPlan {
    pub fn masked_positions(&self, visit: usize, day: usize) -> Option<&BTreeSet<usize>> {
        self.masks.get(&(visit, day))
    }

    /// Number of masked tokens inside one visit.
    pub fn masked_in_visit(&self, visit: usize) -> usize {
        self.per_visit.get(&visit).copied().unwrap_or(0)
    }

    pub fn n_masked(&self) -> usize {
        self.n_masked
    }

    pub fn total_tokens(&self) -> usize {
        self.total_tokens
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The masked `(day position, true activity id)` pairs for one visit day.
    pub fn masked_tokens<'c>(
        &self,
        cohort: &'c Cohort,
        visit: usize,
        day: usize,
    ) -> Vec<(usize, u32)> {
        match self.masks.get(&(visit, day)) {
            None => Vec::new(),
            Some(set) => set.iter().map(|&p| (p, cohort.visits[visit].days[day][p])).collect(),
        }
    }

    #[cfg(test)]
    pub(crate) fn from_parts(
        seed: u64,
        masks: BTreeMap<(usize, usize), BTreeSet<usize>>,
        total_tokens: usize,
    ) -> MaskingPlan {
        let mut per_visit = BTreeMap::new();
        let mut n_masked = 0;
        for (&(v, _), set) in &masks {
            *per_visit.entry(v).or_insert(0) += set.len();
            n_masked += set.len();
        }
        MaskingPlan { seed, masks, per_visit, n_masked, total_tokens }
    }
}

/// Draws the epoch's masking plan: exactly `round(rate × total_tokens)`
/// tokens, uniformly without replacement, never emptying a day. Tokens whose
/// day has only one activity can never be masked. If the no-empty-day
/// constraint makes the exact count infeasible the plan holds the maximum
/// feasible number instead (only possible in degenerate cohorts).
pub fn select_masks(cohort: &Cohort, rate: f64, seed: u64) -> Result<MaskingPlan, TrainError> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(TrainError::BadRate(rate));
    }
    let mut slots: Vec<(usize, usize, usize)> = Vec::new();
    for (v, visit) in cohort.visits.iter().enumerate() {
        for (d, day) in visit.days.iter().enumerate() {
            for p in 0..day.len() {
                slots.push((v, d, p));
            }
        }
    }
    let total_tokens = slots.len();
    if total_tokens == 0 {
        return Err(TrainError::NoTokens);
    }
    let target = (rate * total_tokens as f64).round() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    slots.shuffle(&mut rng);

    // Unmasked tokens still available per day; a draw that would empty its
    // day is skipped (the uniform equivalent of a constraint re-draw).
    let mut remaining: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (v, visit) in cohort.visits.iter().enumerate() {
        for (d, day) in visit.days.iter().enumerate() {
            remaining.insert((v, d), day.len());
        }
    }

    let mut masks: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    let mut per_visit: BTreeMap<usize, usize> = BTreeMap::new();
    let mut n_masked = 0;
    for (v, d, p) in slots {
        if n_masked == target {
            break;
        }
        let left = remaining.get_mut(&(v, d)).expect("every day was indexed");
        if *left <= 1 {
            continue;
        }
        *left -= 1;
        masks.entry((v, d)).or_default().insert(p);
        *per_visit.entry(v).or_insert(0) += 1;
        n_masked += 1;
    }

    Ok(MaskingPlan { seed, masks, per_visit, n_masked, total_tokens })
}
