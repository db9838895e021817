//! Embedding-quality evaluations and downstream fine-tuning.
//!
//! Four evaluations measure what pretraining learned:
//! - **Activity intrusion** ([`build_intrusion_sets`], [`oracle_intrusion`]):
//!   can an oracle with access to ground-truth activity clusters spot the
//!   planted odd-one-out in each six-activity set built from embedding
//!   nearest neighbors? High precision means embedding geometry matches the
//!   cluster structure.
//! - **Diagnosis clustering** ([`diagnosis_vectors`], [`kmeans`], [`nmi`]):
//!   k-means over diagnosis vectors scored against ground-truth families by
//!   normalized mutual information.
//! - **Next-day activity prediction** ([`finetune_next_day`],
//!   [`direct_next_day_eval`], [`frequency_baseline`]): recall at fixed and
//!   adaptive cutoffs, micro-averaged over (visit, day) slots, with
//!   percentile-bootstrap confidence intervals.
//! - **Remaining length of stay** ([`finetune_los`]): RMSE of a regression
//!   head against a constant-mean baseline.
//!
//! All randomized steps take explicit seeds and are deterministic for a
//! given seed and thread count.

mod embeddings;
mod finetune;
mod geometry;
mod intrusion;
mod recall;
mod report;

pub use embeddings::{
    activity_cluster_ids, activity_embeddings, contextual_activity_embeddings,
    diagnosis_family_ids, diagnosis_vectors, DiagnosisVectorMode,
};
pub use finetune::{
    direct_next_day_eval, finetune_los, finetune_next_day, FinetuneConfig, FinetunedLos,
    FinetunedNextDay, InitMode, LosReport, Predictor,
};
pub use geometry::{kmeans, nearest_neighbors, nmi, pairwise_euclidean, KmeansResult};
pub use intrusion::{
    build_intrusion_sets, oracle_intrusion, shuffled_labels, write_intrusion_worksheets,
    IntrusionSet, OracleOutcome,
};
pub use recall::{
    bootstrap_ci, frequency_baseline, frequency_ranking, next_day_slots, rank_activities,
    recall_at_k, standard_recall_at_k, RecallReport,
};
pub use report::{reference, render_recall_table, ClusteringSummary, EvalReport, IntrusionSummary, MethodRow};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {need} activities, have {have}")]
    TooFewActivities { need: usize, have: usize },
    #[error("k = {k} is invalid for {n} points")]
    BadK { k: usize, n: usize },
    #[error("label vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("no ground truth entry for code {0:?}")]
    MissingGroundTruth(String),
    #[error("training: {0}")]
    Train(#[from] crate::training::TrainError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
