//! The network: embedding tables, day-input assembly, Transformer day
//! encoder, masked-activity head, BiLSTM prefix encoder, and next-day head.

mod encoder;
mod lstm;

pub use encoder::DayEncoderOutput;

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Vocabulary;
use crate::tensor::{Graph, NodeId, ParamId, ParamStore, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

/// Architecture hyperparameters. `embed_dim` is both the activity embedding
/// width and the diagnosis day-row width (the two are summed elementwise).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ff_dim: usize,
    pub lstm_hidden: usize,
    /// Truncated-normal initialization scale for all weight matrices.
    pub init_std: f64,
}

impl ModelConfig {
    /// Full-size configuration as used on the original dataset.
    pub fn paper() -> Self {
        ModelConfig {
            embed_dim: 384,
            n_heads: 6,
            n_layers: 6,
            ff_dim: 4 * 384,
            lstm_hidden: 200,
            init_std: 0.02,
        }
    }

    /// Small configuration that trains in minutes on a laptop.
    pub fn desk() -> Self {
        ModelConfig {
            embed_dim: 64,
            n_heads: 4,
            n_layers: 2,
            ff_dim: 4 * 64,
            lstm_hidden: 64,
            init_std: 0.02,
        }
    }

    /// `n_layers == 0` is permitted (the encoder degenerates to the identity
    /// stack); everything else must be positive and heads must divide the
    /// embedding width.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim == 0 || self.n_heads == 0 || self.ff_dim == 0 || self.lstm_hidden == 0 {
            return Err(ModelError::InvalidConfig("dimensions must be positive".into()));
        }
        if self.embed_dim % self.n_heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if !(self.init_std > 0.0) || !self.init_std.is_finite() {
            return Err(ModelError::InvalidConfig("init_std must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }
}

/// The two architecture/task switches studied in the ablation experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Drop the per-diagnosis day-index matrices; instead append the
    /// diagnosis as one extra activity-like token to every day.
    pub diagnosis_as_activity: bool,
    /// Replace the next-day prediction task with a pairwise consecutive-day
    /// classification task during pretraining.
    pub pairwise_day_task: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub ff_w1: ParamId,
    pub ff_b1: ParamId,
    pub ff_w2: ParamId,
    pub ff_b2: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    /// Input projection, `embed_dim × 4·hidden`, gate order `[i, f, g, o]`.
    pub w_x: ParamId,
    /// Recurrent projection, `hidden × 4·hidden`.
    pub w_h: ParamId,
    /// Gate bias, `4·hidden`.
    pub b: ParamId,
}

/// Parameters owned by whichever day-level pretraining task is active. The
/// BiLSTM prefix encoder exists for next-day prediction, so the pairwise
/// ablation does not allocate it — no parameter is ever dead by construction.
#[derive(Debug, Clone, Copy)]
pub enum DayTaskParams {
    NextDay { lstm_fwd: LstmParams, lstm_bwd: LstmParams, next_w: ParamId, next_b: ParamId },
    Pairwise { pairwise_w: ParamId, pairwise_b: ParamId },
}

/// Handles to every parameter; registration order is the checkpoint layout.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub activity_table: ParamId,
    /// One day-index matrix per diagnosis id (absent under the
    /// `diagnosis_as_activity` ablation).
    pub diag_tables: Vec<ParamId>,
    /// Diagnosis token embeddings (present only under the ablation).
    pub diag_token_table: Option<ParamId>,
    pub layers: Vec<LayerParams>,
    pub masked_w: ParamId,
    pub masked_b: ParamId,
    pub day_task: DayTaskParams,
}

pub struct Model {
    pub config: ModelConfig,
    pub ablation: Ablation,
    pub vocabulary: Vocabulary,
    pub store: ParamStore,
    pub params: ModelParams,
}

impl Model {
    /// Fresh model with truncated-normal weights (±2 std), ones for
    /// layer-norm gains, zeros for every bias.
    pub fn new(
        config: ModelConfig,
        ablation: Ablation,
        vocabulary: Vocabulary,
        seed: u64,
    ) -> Result<Model, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let q = config.embed_dim;
        let n_act = vocabulary.n_activities();
        let normal =
            |store: &mut ParamStore, name: &str, shape: &[usize], rng: &mut ChaCha8Rng| {
                store.register(name, Tensor::truncated_normal(shape, config.init_std, rng))
            };

        let activity_table =
            normal(&mut store, "activity_table", &[vocabulary.n_tokens(), q], &mut rng);

        let mut diag_tables = Vec::new();
        let mut diag_token_table = None;
        if ablation.diagnosis_as_activity {
            diag_token_table = Some(normal(
                &mut store,
                "diag_token_table",
                &[vocabulary.n_diagnoses().max(1), q],
                &mut rng,
            ));
        } else {
            for d in 0..vocabulary.n_diagnoses() {
                let rows = vocabulary.n_g(d as u32) as usize;
                diag_tables.push(normal(&mut store, &format!("diag_table.{d}"), &[rows, q], &mut rng));
            }
        }

        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = |s: &str| format!("layer.{l}.{s}");
            layers.push(LayerParams {
                w_q: normal(&mut store, &p("w_q"), &[q, q], &mut rng),
                w_k: normal(&mut store, &p("w_k"), &[q, q], &mut rng),
                w_v: normal(&mut store, &p("w_v"), &[q, q], &mut rng),
                w_o: normal(&mut store, &p("w_o"), &[q, q], &mut rng),
                ff_w1: normal(&mut store, &p("ff_w1"), &[q, config.ff_dim], &mut rng),
                ff_b1: store.register(&p("ff_b1"), Tensor::zeros(&[config.ff_dim])),
                ff_w2: normal(&mut store, &p("ff_w2"), &[config.ff_dim, q], &mut rng),
                ff_b2: store.register(&p("ff_b2"), Tensor::zeros(&[q])),
                ln1_gain: store.register(&p("ln1_gain"), Tensor::ones(&[q])),
                ln1_bias: store.register(&p("ln1_bias"), Tensor::zeros(&[q])),
                ln2_gain: store.register(&p("ln2_gain"), Tensor::ones(&[q])),
                ln2_bias: store.register(&p("ln2_bias"), Tensor::zeros(&[q])),
            });
        }

        let masked_w = normal(&mut store, "masked_head.w", &[q, n_act.max(1)], &mut rng);
        let masked_b = store.register("masked_head.b", Tensor::zeros(&[n_act.max(1)]));

        let day_task = if ablation.pairwise_day_task {
            DayTaskParams::Pairwise {
                pairwise_w: normal(&mut store, "pairwise_head.w", &[2 * q, 1], &mut rng),
                pairwise_b: store.register("pairwise_head.b", Tensor::zeros(&[1])),
            }
        } else {
            let h = config.lstm_hidden;
            let lstm = |prefix: &str, store: &mut ParamStore, rng: &mut ChaCha8Rng| LstmParams {
                w_x: store.register(
                    &format!("{prefix}.w_x"),
                    Tensor::truncated_normal(&[q, 4 * h], config.init_std, rng),
                ),
                w_h: store.register(
                    &format!("{prefix}.w_h"),
                    Tensor::truncated_normal(&[h, 4 * h], config.init_std, rng),
                ),
                b: store.register(&format!("{prefix}.b"), Tensor::zeros(&[4 * h])),
            };
            DayTaskParams::NextDay {
                lstm_fwd: lstm("lstm.fwd", &mut store, &mut rng),
                lstm_bwd: lstm("lstm.bwd", &mut store, &mut rng),
                next_w: normal(&mut store, "next_head.w", &[2 * h, n_act.max(1)], &mut rng),
                next_b: store.register("next_head.b", Tensor::zeros(&[n_act.max(1)])),
            }
        };

        Ok(Model {
            config,
            ablation,
            vocabulary,
            store,
            params: ModelParams {
                activity_table,
                diag_tables,
                diag_token_table,
                layers,
                masked_w,
                masked_b,
                day_task,
            },
        })
    }

    /// Forward/backward LSTM parameters; panics when the pairwise ablation
    /// replaced the next-day machinery.
    pub(crate) fn lstm_params(&self) -> (&LstmParams, &LstmParams) {
        match &self.params.day_task {
            DayTaskParams::NextDay { lstm_fwd, lstm_bwd, .. } => (lstm_fwd, lstm_bwd),
            DayTaskParams::Pairwise { .. } => {
                panic!("prefix encoding requires the next-day task parameters")
            }
        }
    }

    /// Day-index row for a 1-based day `t`: indices past the diagnosis's
    /// capacity clamp to the last row.
    pub fn day_row_index(&self, diagnosis: u32, t: usize) -> usize {
        debug_assert!(t >= 1, "day indices are 1-based");
        let n_g = self.vocabulary.n_g(diagnosis) as usize;
        t.min(n_g) - 1
    }

    /// Builds the `(1+n) × q` input for one day: row 0 is `[CLS]`, rows 1..n
    /// are the day's activities in vocabulary-id order, with masked positions
    /// replaced by `[MASK]`. Every row receives the diagnosis's day-index row
    /// for day `t` added elementwise. Under the `diagnosis_as_activity`
    /// ablation there is no day-index row; instead the diagnosis's token
    /// embedding is appended as a final extra row.
    ///
    /// `masked` holds 0-based positions into the activity list (so position
    /// `j` masks input row `j + 1`).
    pub fn assemble_input_sequence(
        &self,
        g: &mut Graph,
        day: &[u32],
        diagnosis: u32,
        t: usize,
        masked: Option<&BTreeSet<usize>>,
    ) -> NodeId {
        assert!(!day.is_empty(), "day must be non-empty");
        assert!((diagnosis as usize) < self.vocabulary.n_diagnoses(), "unknown diagnosis id");
        let n_act = self.vocabulary.n_activities() as u32;
        let mut tokens: Vec<usize> = Vec::with_capacity(day.len() + 1);
        tokens.push(self.vocabulary.cls_id() as usize);
        for (j, &a) in day.iter().enumerate() {
            assert!(a < n_act, "unknown activity id {a}");
            let is_masked = masked.is_some_and(|m| m.contains(&j));
            tokens.push(if is_masked { self.vocabulary.mask_id() as usize } else { a as usize });
        }

        let table = g.param(&self.store, self.params.activity_table);
        let rows = g.select_rows(table, &tokens);

        if self.ablation.diagnosis_as_activity {
            let diag_table = g.param(
                &self.store,
                self.params.diag_token_table.expect("ablation allocates the token table"),
            );
            let diag_row = g.select_rows(diag_table, &[diagnosis as usize]);
            g.concat_rows(&[rows, diag_row])
        } else {
            let day_table = g.param(&self.store, self.params.diag_tables[diagnosis as usize]);
            let day_row = g.select_rows(day_table, &[self.day_row_index(diagnosis, t)]);
            g.add_row(rows, day_row)
        }
    }

    /// Logits over the real activities for masked rows (`M × q` in, `M × |A|`
    /// out). Softmax is part of the loss, not the head.
    pub fn masked_head(&self, g: &mut Graph, t_mask: NodeId) -> NodeId {
        let w = g.param(&self.store, self.params.masked_w);
        let b = g.param(&self.store, self.params.masked_b);
        let proj = g.matmul(t_mask, w);
        g.add_row(proj, b)
    }

    /// Logits over the real activities from a prefix representation
    /// (`1 × 2·lstm_hidden` in, `1 × |A|` out).
    pub fn next_day_head(&self, g: &mut Graph, h: NodeId) -> NodeId {
        let DayTaskParams::NextDay { next_w, next_b, .. } = self.params.day_task else {
            panic!("next-day head requires the next-day task parameters")
        };
        let w = g.param(&self.store, next_w);
        let b = g.param(&self.store, next_b);
        let proj = g.matmul(h, w);
        g.add_row(proj, b)
    }

    /// Consecutive-day logit for the pairwise ablation task:
    /// `concat(t_cls_a, t_cls_b)` through a logistic head.
    pub fn pairwise_head(&self, g: &mut Graph, t_cls_a: NodeId, t_cls_b: NodeId) -> NodeId {
        let DayTaskParams::Pairwise { pairwise_w, pairwise_b } = self.params.day_task else {
            panic!("pairwise head requires the pairwise ablation")
        };
        let w = g.param(&self.store, pairwise_w);
        let b = g.param(&self.store, pairwise_b);
        let cat = g.concat_cols(&[t_cls_a, t_cls_b]);
        let proj = g.matmul(cat, w);
        g.add_row(proj, b)
    }
}
