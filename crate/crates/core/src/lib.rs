//! Day-level representation learning for inpatient visit data.
//!
//! The crate models a hospital stay as an ordered sequence of days, each day
//! an unordered set of clinical activity codes, the whole visit labeled with
//! an admission diagnosis. A Transformer day encoder pretrained with masked
//! activity recovery and next-day activity prediction produces embeddings for
//! days, visit prefixes, activities and diagnoses.
//!
//! Modules:
//! - [`tensor`] — dense f64 tensors, a reverse-mode autodiff tape, Adam.
//! - [`corpus`] — visit records, JSONL I/O, filtering, stats, splits, and a
//!   synthetic cohort generator with ground-truth structure.
//! - [`model`] — embedding tables, the day encoder, the BiLSTM prefix
//!   encoder, and the two prediction heads.
//! - [`training`] — masking plans, pretraining losses, the training loop, and
//!   binary checkpoints.
//! - [`eval`] — embedding-quality evaluations (intrusion, clustering NMI),
//!   downstream fine-tuning (next-day recall, remaining length of stay), and
//!   report serialization.

pub mod corpus;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod training;
mod util;

pub use corpus::{Cohort, CohortStats, FilterConfig, GroundTruth, SplitConfig, Visit, Vocabulary};
pub use eval::{EvalReport, FinetuneConfig, LosReport, RecallReport};
pub use model::{Ablation, Model, ModelConfig};
pub use tensor::{AdamConfig, Graph, ParamStore, Tensor};
pub use training::{pretrain, Checkpoint, EpochLog, PretrainConfig};
