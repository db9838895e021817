//! Visit-level corpus model: records, vocabulary, I/O, filtering, statistics,
//! splitting, and synthetic cohort generation.
//!
//! A visit is an admission diagnosis plus an ordered list of hospital days;
//! each day is an unordered, deduplicated set of activity codes. Activities
//! and diagnoses are referenced by dense integer ids assigned by the
//! [`Vocabulary`]; the special `[CLS]`, `[MASK]` and `[PAD]` tokens live
//! directly after the real activity ids so one embedding table covers all of
//! them.

mod filter;
mod io;
mod split;
mod stats;
mod synthetic;

pub use filter::{filter_cohort, FilterConfig};
pub use io::{load_cohort, load_ground_truth, save_cohort, save_ground_truth};
pub use split::{split_cohort, SplitConfig};
pub use stats::{cohort_stats, CohortStats};
pub use synthetic::{generate_synthetic, GroundTruth, SyntheticSpec};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("unsupported cohort schema: {found}")]
    UnknownSchema { found: String },
    #[error("file contains no data")]
    EmptyFile,
    #[error("cohort contains no visits")]
    EmptyCohort,
    #[error("split ratios must be nonnegative and sum to 1 (got {0}, {1}, {2})")]
    BadRatios(f64, f64, f64),
    #[error("cohort has {n} visits; at least 3 are required to split")]
    TooSmallToSplit { n: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// One hospital stay: an admission diagnosis and one activity set per day.
/// `days[t]` holds sorted, deduplicated activity ids for day `t + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Visit {
    pub id: String,
    pub diagnosis: u32,
    pub days: Vec<Vec<u32>>,
}

impl Visit {
    /// Length of stay in days.
    pub fn los(&self) -> usize {
        self.days.len()
    }
}

/// Bijective code ↔ id maps for activities and diagnoses, plus the maximum
/// observed length of stay per diagnosis (used to size the day-index
/// embedding matrices). Ids are assigned by lexicographic code order; the
/// `[CLS]`, `[MASK]` and `[PAD]` specials are appended after the real
/// activities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    activity_codes: Vec<String>,
    diagnosis_codes: Vec<String>,
    /// Maximum observed LOS per diagnosis id, clamped to [1, 50].
    n_g: Vec<u32>,
}

pub const MAX_LOS: usize = 50;

impl Vocabulary {
    /// Builds the maps from raw code-level visits. Codes are sorted so ids
    /// are independent of visit order.
    fn build(visits: &[CodeVisit]) -> Self {
        let mut activities = BTreeSet::new();
        let mut diagnoses = BTreeSet::new();
        for v in visits {
            diagnoses.insert(v.diagnosis.clone());
            for day in &v.days {
                for code in day {
                    activities.insert(code.clone());
                }
            }
        }
        let diagnosis_codes: Vec<String> = diagnoses.into_iter().collect();
        let mut n_g = vec![1u32; diagnosis_codes.len()];
        for v in visits {
            let d = diagnosis_codes.binary_search(&v.diagnosis).expect("diagnosis collected");
            let los = (v.days.len() as u32).clamp(1, MAX_LOS as u32);
            n_g[d] = n_g[d].max(los);
        }
        Vocabulary {
            activity_codes: activities.into_iter().collect(),
            diagnosis_codes,
            n_g,
        }
    }

    pub fn n_activities(&self) -> usize {
        self.activity_codes.len()
    }

    pub fn n_diagnoses(&self) -> usize {
        self.diagnosis_codes.len()
    }

    /// Token-table size: real activities plus the three specials.
    pub fn n_tokens(&self) -> usize {
        self.activity_codes.len() + 3
    }

    pub fn cls_id(&self) -> u32 {
        self.activity_codes.len() as u32
    }

    pub fn mask_id(&self) -> u32 {
        self.activity_codes.len() as u32 + 1
    }

    pub fn pad_id(&self) -> u32 {
        self.activity_codes.len() as u32 + 2
    }

    pub fn activity_id(&self, code: &str) -> Option<u32> {
        self.activity_codes.binary_search_by(|c| c.as_str().cmp(code)).ok().map(|i| i as u32)
    }

    pub fn activity_code(&self, id: u32) -> &str {
        &self.activity_codes[id as usize]
    }

    pub fn diagnosis_id(&self, code: &str) -> Option<u32> {
        self.diagnosis_codes.binary_search_by(|c| c.as_str().cmp(code)).ok().map(|i| i as u32)
    }

    pub fn diagnosis_code(&self, id: u32) -> &str {
        &self.diagnosis_codes[id as usize]
    }

    pub fn activity_codes(&self) -> &[String] {
        &self.activity_codes
    }

    pub fn diagnosis_codes(&self) -> &[String] {
        &self.diagnosis_codes
    }

    /// Maximum observed LOS for a diagnosis; rows of its day-index matrix.
    pub fn n_g(&self, diagnosis: u32) -> u32 {
        self.n_g[diagnosis as usize]
    }

    /// Hex SHA-256 over the canonical code lists; identifies the vocabulary
    /// across checkpoints and cohort files.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for code in &self.activity_codes {
            hasher.update(code.as_bytes());
            hasher.update([0u8]);
        }
        hasher.update([1u8]);
        for (code, ng) in self.diagnosis_codes.iter().zip(&self.n_g) {
            hasher.update(code.as_bytes());
            hasher.update(ng.to_le_bytes());
            hasher.update([0u8]);
        }
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A set of visits with their shared vocabulary.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub visits: Vec<Visit>,
    pub vocabulary: Vocabulary,
    /// Where the cohort came from: a file path or a generator seed.
    pub provenance: String,
    /// Duplicate activity mentions merged away while building the cohort.
    pub duplicates_merged: usize,
}

impl Cohort {
    /// True when visits and vocabulary agree exactly (provenance aside).
    pub fn structurally_eq(&self, other: &Cohort) -> bool {
        self.visits == other.visits && self.vocabulary == other.vocabulary
    }

    pub fn total_days(&self) -> usize {
        self.visits.iter().map(Visit::los).sum()
    }

    pub fn total_activity_mentions(&self) -> usize {
        self.visits
            .iter()
            .flat_map(|v| v.days.iter())
            .map(Vec::len)
            .sum()
    }

    /// Assembles a cohort from code-level visits: builds the vocabulary,
    /// deduplicates each day, and maps codes to ids. Days must be non-empty.
    pub(crate) fn from_code_visits(
        raw: Vec<CodeVisit>,
        provenance: String,
    ) -> Result<Cohort, CorpusError> {
        if raw.is_empty() {
            return Err(CorpusError::EmptyCohort);
        }
        let mut duplicates = 0usize;
        let deduped: Vec<CodeVisit> = raw
            .into_iter()
            .map(|mut v| {
                for day in &mut v.days {
                    let before = day.len();
                    let set: BTreeSet<String> = std::mem::take(day).into_iter().collect();
                    duplicates += before - set.len();
                    *day = set.into_iter().collect();
                }
                v
            })
            .collect();
        let vocabulary = Vocabulary::build(&deduped);
        let visits = deduped
            .into_iter()
            .map(|v| Visit {
                diagnosis: vocabulary.diagnosis_id(&v.diagnosis).expect("diagnosis in vocab"),
                days: v
                    .days
                    .iter()
                    .map(|day| {
                        day.iter()
                            .map(|c| vocabulary.activity_id(c).expect("activity in vocab"))
                            .collect()
                    })
                    .collect(),
                id: v.visit_id,
            })
            .collect();
        Ok(Cohort { visits, vocabulary, provenance, duplicates_merged: duplicates })
    }

    /// The inverse view of `from_code_visits`, used when writing files and
    /// rebuilding vocabularies after filtering.
    pub(crate) fn to_code_visits(&self) -> Vec<CodeVisit> {
        self.visits
            .iter()
            .map(|v| CodeVisit {
                visit_id: v.id.clone(),
                diagnosis: self.vocabulary.diagnosis_code(v.diagnosis).to_string(),
                days: v
                    .days
                    .iter()
                    .map(|day| {
                        day.iter().map(|&a| self.vocabulary.activity_code(a).to_string()).collect()
                    })
                    .collect(),
            })
            .collect()
    }
}

/// Code-level visit as it appears in cohort files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct CodeVisit {
    pub visit_id: String,
    pub diagnosis: String,
    pub days: Vec<Vec<String>>,
}
