//! Downstream fine-tuning: a predictor that couples the pretrained backbone
//! with location-based attention pooling over day representations, trained
//! end-to-end for next-day activity prediction or remaining length of stay.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Cohort, Visit};
use crate::model::{Ablation, Model};
use crate::tensor::{AdamConfig, AdamState, Gradients, Graph, NodeId, ParamId, Tensor};
use crate::training::{mix_seed, Checkpoint, TrainError};
use crate::util::run_indexed;

use super::recall::{bootstrap_ci, rank_activities, RecallReport, SlotRecall};

const ATT_SEED_SALT: u64 = 0xA77E_17D0;
const FT_ORDER_SALT: u64 = 0xF17E_94D3;
const BOOTSTRAP_SALT: u64 = 0xB007_57A9;

/// How the predictor's backbone is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// From the checkpoint's trained weights.
    Pretrained,
    /// Fresh weights with the identical architecture — the control arm that
    /// isolates the contribution of pretraining.
    RandomInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub threads: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 5,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
            threads: 1,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// The downstream predictor: backbone (embeddings, day encoder, BiLSTM,
/// next-day head) plus an attention-pooled day context added to each prefix
/// state through a zero-initialized projection. At initialization the
/// projection contributes nothing, so an untrained predictor scores exactly
/// like the pretrained next-day head.
pub struct Predictor {
    pub model: Model,
    att_v: ParamId,
    att_proj: ParamId,
    los_head: Option<(ParamId, ParamId)>,
}

#[derive(Clone, Copy)]
enum Task {
    NextDay,
    Los,
}

impl Predictor {
    /// Predictor for next-day activity prediction.
    pub fn next_day(ckpt: &Checkpoint, init: InitMode, seed: u64) -> Result<Predictor, TrainError> {
        Predictor::build(ckpt, init, seed, false)
    }

    /// Predictor for remaining length of stay (adds a scalar regression head).
    pub fn remaining_los(
        ckpt: &Checkpoint,
        init: InitMode,
        seed: u64,
    ) -> Result<Predictor, TrainError> {
        Predictor::build(ckpt, init, seed, true)
    }

    fn build(
        ckpt: &Checkpoint,
        init: InitMode,
        seed: u64,
        los: bool,
    ) -> Result<Predictor, TrainError> {
        // The predictor always needs the next-day machinery; a checkpoint
        // trained with the pairwise ablation contributes its shared weights
        // and gets a fresh BiLSTM and head.
        let ablation = Ablation {
            diagnosis_as_activity: ckpt.train_config.ablation.diagnosis_as_activity,
            pairwise_day_task: false,
        };
        let mut model = match init {
            InitMode::RandomInit => {
                Model::new(ckpt.model_config, ablation, ckpt.vocabulary.clone(), seed)?
            }
            InitMode::Pretrained if !ckpt.train_config.ablation.pairwise_day_task => {
                ckpt.to_model()?
            }
            InitMode::Pretrained => {
                let mut fresh =
                    Model::new(ckpt.model_config, ablation, ckpt.vocabulary.clone(), seed)?;
                let ids: Vec<ParamId> = fresh.store.ids().collect();
                for id in ids {
                    let name = fresh.store.name(id).to_string();
                    if let Some(tensor) = ckpt.tensor_by_name(&name) {
                        fresh
                            .store
                            .set(id, tensor.clone())
                            .map_err(|e| TrainError::Corrupt(format!("parameter {name}: {e}")))?;
                    }
                }
                fresh
            }
        };
        let q = model.config.embed_dim;
        let h2 = 2 * model.config.lstm_hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, ATT_SEED_SALT));
        let att_v = model.store.register(
            "finetune.att_v",
            Tensor::truncated_normal(&[q, 1], model.config.init_std, &mut rng),
        );
        let att_proj = model.store.register("finetune.att_proj", Tensor::zeros(&[q, h2]));
        let los_head = los.then(|| {
            let w = model.store.register("finetune.los_w", Tensor::zeros(&[h2, 1]));
            let b = model.store.register("finetune.los_b", Tensor::zeros(&[1]));
            (w, b)
        });
        Ok(Predictor { model, att_v, att_proj, los_head })
    }

    /// Prefix states with pooled day context, one row per prefix length
    /// `p = 1..LOS`, as a `(LOS−1) × 2H` node. The pooled context for prefix
    /// `p` is a location-based attention average of the first `p` day
    /// representations, mapped through the zero-initialized projection and
    /// added to the BiLSTM state.
    fn contextual_states(&self, g: &mut Graph, visit: &Visit) -> NodeId {
        let day_reps: Vec<NodeId> = visit
            .days
            .iter()
            .enumerate()
            .map(|(d, day)| {
                let input =
                    self.model.assemble_input_sequence(g, day, visit.diagnosis, d + 1, None);
                self.model.encode_day(g, input, None).t_cls
            })
            .collect();
        let states = self.model.prefix_states(g, &day_reps);
        let att_v = g.param(&self.model.store, self.att_v);
        let att_proj = g.param(&self.model.store, self.att_proj);
        let scores: Vec<NodeId> = day_reps.iter().map(|&rep| g.matmul(rep, att_v)).collect();
        let mut rows = Vec::with_capacity(states.len());
        for (i, &state) in states.iter().enumerate() {
            let p = i + 1;
            let s = g.concat_cols(&scores[..p]);
            let alpha = g.softmax_rows(s);
            let stacked = g.concat_rows(&day_reps[..p]);
            let pooled = g.matmul(alpha, stacked);
            let delta = g.matmul(pooled, att_proj);
            rows.push(g.add(state, delta));
        }
        g.concat_rows(&rows)
    }

    /// `(LOS−1) × |A|` next-day logits, one row per prefix.
    fn next_day_logits(&self, g: &mut Graph, visit: &Visit) -> NodeId {
        let h = self.contextual_states(g, visit);
        self.model.next_day_head(g, h)
    }

    /// Per-visit next-day loss: mean cross-entropy against the normalized
    /// multi-hot of each target day.
    fn next_day_loss(&self, g: &mut Graph, visit: &Visit) -> NodeId {
        let logits = self.next_day_logits(g, visit);
        let n_act = self.model.vocabulary.n_activities();
        let mut rows = Vec::with_capacity(visit.los() - 1);
        for target_day in &visit.days[1..] {
            let mut row = vec![0.0; n_act];
            for &a in target_day {
                row[a as usize] = 1.0 / target_day.len() as f64;
            }
            rows.push(row);
        }
        let target = g.constant(Tensor::from_rows(&rows).expect("uniform row width"));
        g.cross_entropy(logits, target)
    }

    /// `(LOS−1) × 1` remaining-LOS predictions, one row per prefix.
    fn los_predictions(&self, g: &mut Graph, visit: &Visit) -> NodeId {
        let (w, b) = self.los_head.expect("predictor was built without the LOS head");
        let h = self.contextual_states(g, visit);
        let wn = g.param(&self.model.store, w);
        let bn = g.param(&self.model.store, b);
        let proj = g.matmul(h, wn);
        g.add_row(proj, bn)
    }

    /// Per-visit LOS loss: mean squared error of remaining days over all
    /// prefixes (`LOS − p` for prefix length `p`).
    fn los_loss(&self, g: &mut Graph, visit: &Visit) -> NodeId {
        let pred = self.los_predictions(g, visit);
        let remaining: Vec<f64> =
            (1..visit.los()).map(|p| (visit.los() - p) as f64).collect();
        let n = remaining.len();
        let target = g.constant(Tensor::from_vec(&[n, 1], remaining).expect("column"));
        let diff = g.sub(pred, target);
        let sq = g.mul(diff, diff);
        g.mean_all(sq)
    }

    fn visit_loss(&self, g: &mut Graph, visit: &Visit, task: Task) -> NodeId {
        match task {
            Task::NextDay => self.next_day_loss(g, visit),
            Task::Los => self.los_loss(g, visit),
        }
    }
}

/// Visits long enough to provide a prediction slot.
fn eligible_visits(cohort: &Cohort) -> Vec<usize> {
    cohort.visits.iter().enumerate().filter(|(_, v)| v.los() >= 2).map(|(i, _)| i).collect()
}

/// End-to-end fine-tuning loop shared by both tasks. Returns the per-epoch
/// mean train loss (measured as batches are visited, before each step).
fn run_finetune(
    predictor: &mut Predictor,
    train: &Cohort,
    cfg: &FinetuneConfig,
    task: Task,
) -> Result<Vec<f64>, TrainError> {
    cfg.validate()?;
    let eligible = eligible_visits(train);
    if eligible.is_empty() {
        return Err(TrainError::NoEligibleVisits);
    }
    let mut adam = AdamState::new(&predictor.model.store, cfg.adam);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order = eligible.clone();
        let order_seed = mix_seed(mix_seed(cfg.seed, FT_ORDER_SALT), epoch as u64);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let n = batch.len() as f64;
            let shared: &Predictor = predictor;
            let results = run_indexed(cfg.threads.max(1), batch.len(), |slot| {
                let mut g = Graph::new();
                let loss = shared.visit_loss(&mut g, &train.visits[batch[slot]], task);
                let scaled = g.scale(loss, 1.0 / n);
                g.backward(scaled).map(|grads| (g.value(loss).scalar_value(), grads))
            });
            let mut grads = Gradients::default();
            let mut batch_loss = 0.0;
            for result in results {
                let (value, visit_grads) = result.map_err(|e| TrainError::Diverged {
                    epoch,
                    batch: b,
                    what: e.to_string(),
                })?;
                if !value.is_finite() {
                    return Err(TrainError::Diverged {
                        epoch,
                        batch: b,
                        what: "non-finite visit loss".into(),
                    });
                }
                batch_loss += value;
                grads.add_assign(&visit_grads);
            }
            loss_sum += batch_loss;
            adam.step(&mut predictor.model.store, &grads);
        }
        curve.push(loss_sum / eligible.len() as f64);
    }
    Ok(curve)
}

/// Scores next-day logits rows into per-slot recalls, in slot order.
fn score_next_day<F>(test: &Cohort, threads: usize, logits_for: F) -> Vec<SlotRecall>
where
    F: Fn(&mut Graph, &Visit) -> NodeId + Sync,
{
    let eligible = eligible_visits(test);
    let per_visit = run_indexed(threads.max(1), eligible.len(), |i| {
        let visit = &test.visits[eligible[i]];
        let mut g = Graph::new();
        let logits = logits_for(&mut g, visit);
        let rows = g.value(logits);
        let mut slots = Vec::with_capacity(visit.los() - 1);
        for (p, target_day) in visit.days[1..].iter().enumerate() {
            let ranking = rank_activities(rows.row(p));
            let truth: BTreeSet<u32> = target_day.iter().copied().collect();
            slots.push(SlotRecall::score(&ranking, &truth));
        }
        slots
    });
    per_visit.into_iter().flatten().collect()
}

/// Evaluates a pretrained model's next-day head directly (no fine-tuning, no
/// pooling). A zero-epoch fine-tune reproduces these numbers exactly.
pub fn direct_next_day_eval(
    model: &Model,
    test: &Cohort,
    threads: usize,
    bootstrap_seed: u64,
) -> Result<RecallReport, TrainError> {
    let slots = score_next_day(test, threads, |g, visit| {
        let day_reps: Vec<NodeId> = visit
            .days
            .iter()
            .enumerate()
            .map(|(d, day)| {
                let input = model.assemble_input_sequence(g, day, visit.diagnosis, d + 1, None);
                model.encode_day(g, input, None).t_cls
            })
            .collect();
        let states = model.prefix_states(g, &day_reps);
        let h = g.concat_rows(&states);
        model.next_day_head(g, h)
    });
    if slots.is_empty() {
        return Err(TrainError::NoEligibleVisits);
    }
    Ok(RecallReport::from_slots(&slots, bootstrap_seed))
}

#[derive(Debug, Clone)]
pub struct FinetunedNextDay {
    pub report: RecallReport,
    /// Mean train loss per epoch.
    pub train_curve: Vec<f64>,
}

/// Fine-tunes for next-day activity prediction on `train` and reports recall
/// on `test`.
pub fn finetune_next_day(
    ckpt: &Checkpoint,
    train: &Cohort,
    test: &Cohort,
    cfg: &FinetuneConfig,
    init: InitMode,
) -> Result<FinetunedNextDay, TrainError> {
    ckpt.ensure_matches(train)?;
    ckpt.ensure_matches(test)?;
    let mut predictor = Predictor::next_day(ckpt, init, cfg.seed)?;
    let train_curve = run_finetune(&mut predictor, train, cfg, Task::NextDay)?;
    let shared = &predictor;
    let slots =
        score_next_day(test, cfg.threads, |g, visit| shared.next_day_logits(g, visit));
    if slots.is_empty() {
        return Err(TrainError::NoEligibleVisits);
    }
    let report = RecallReport::from_slots(&slots, mix_seed(cfg.seed, BOOTSTRAP_SALT));
    Ok(FinetunedNextDay { report, train_curve })
}

/// Remaining length-of-stay evaluation: RMSE over every (visit, prefix) slot
/// against the true remaining days, with a constant-mean baseline fit on the
/// train split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosReport {
    pub n_slots: usize,
    pub rmse: f64,
    /// RMSE of always predicting the train-split mean remaining LOS.
    pub baseline_rmse: f64,
    /// 95% percentile-bootstrap interval for the RMSE.
    pub ci_rmse: (f64, f64),
    pub per_slot_squared_error: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FinetunedLos {
    pub report: LosReport,
    pub train_curve: Vec<f64>,
}

/// Remaining-LOS targets over a cohort's slots, in slot order.
fn remaining_targets(cohort: &Cohort) -> Vec<f64> {
    let mut out = Vec::new();
    for visit in &cohort.visits {
        for p in 1..visit.los() {
            out.push((visit.los() - p) as f64);
        }
    }
    out
}

/// Fine-tunes the LOS regression head (plus backbone) on `train` and reports
/// RMSE on `test`.
pub fn finetune_los(
    ckpt: &Checkpoint,
    train: &Cohort,
    test: &Cohort,
    cfg: &FinetuneConfig,
    init: InitMode,
) -> Result<FinetunedLos, TrainError> {
    ckpt.ensure_matches(train)?;
    ckpt.ensure_matches(test)?;
    let mut predictor = Predictor::remaining_los(ckpt, init, cfg.seed)?;
    let train_curve = run_finetune(&mut predictor, train, cfg, Task::Los)?;

    let eligible = eligible_visits(test);
    let shared = &predictor;
    let per_visit = run_indexed(cfg.threads.max(1), eligible.len(), |i| {
        let visit = &test.visits[eligible[i]];
        let mut g = Graph::new();
        let pred = shared.los_predictions(&mut g, visit);
        let values = g.value(pred).data().to_vec();
        let mut sq = Vec::with_capacity(values.len());
        for (p, value) in values.into_iter().enumerate() {
            let actual = (visit.los() - (p + 1)) as f64;
            sq.push((value - actual) * (value - actual));
        }
        sq
    });
    let per_slot_squared_error: Vec<f64> = per_visit.into_iter().flatten().collect();
    if per_slot_squared_error.is_empty() {
        return Err(TrainError::NoEligibleVisits);
    }

    let train_targets = remaining_targets(train);
    let constant = train_targets.iter().sum::<f64>() / train_targets.len().max(1) as f64;
    let test_targets = remaining_targets(test);
    let baseline_rmse = (test_targets.iter().map(|t| (t - constant) * (t - constant)).sum::<f64>()
        / test_targets.len() as f64)
        .sqrt();

    let n = per_slot_squared_error.len();
    let rmse = (per_slot_squared_error.iter().sum::<f64>() / n as f64).sqrt();
    let (lo, hi) =
        bootstrap_ci(&per_slot_squared_error, 1000, mix_seed(cfg.seed, BOOTSTRAP_SALT));
    let report = LosReport {
        n_slots: n,
        rmse,
        baseline_rmse,
        ci_rmse: (lo.sqrt(), hi.sqrt()),
        per_slot_squared_error,
    };
    Ok(FinetunedLos { report, train_curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, split_cohort, GroundTruth, SplitConfig, SyntheticSpec};
    use crate::model::{Ablation, ModelConfig};
    use crate::training::PretrainConfig;

    fn tiny_config() -> ModelConfig {
        ModelConfig { embed_dim: 8, n_heads: 2, n_layers: 1, ff_dim: 16, lstm_hidden: 6, init_std: 0.05 }
    }

    fn tiny_splits(seed: u64) -> (Cohort, Cohort) {
        let spec = SyntheticSpec::with_counts(40, 15, 3, 5, 2, seed);
        let (cohort, _): (Cohort, GroundTruth) = generate_synthetic(&spec).unwrap();
        let (train, _, test) = split_cohort(
            &cohort,
            &SplitConfig { train: 0.6, valid: 0.0, test: 0.4, seed: 5 },
        )
        .unwrap();
        (train, test)
    }

    fn untrained_checkpoint(train: &Cohort, ablation: Ablation) -> Checkpoint {
        let model =
            Model::new(tiny_config(), ablation, train.vocabulary.clone(), 11).unwrap();
        let train_config = PretrainConfig { ablation, ..PretrainConfig::default() };
        Checkpoint::from_model(&model, &train_config, vec![], 0)
    }

    #[test]
    fn zero_epoch_finetune_equals_direct_pretrained_eval() {
        let (train, test) = tiny_splits(1);
        let ckpt = untrained_checkpoint(&train, Ablation::default());
        let cfg = FinetuneConfig { epochs: 0, seed: 3, ..FinetuneConfig::default() };
        let tuned = finetune_next_day(&ckpt, &train, &test, &cfg, InitMode::Pretrained).unwrap();
        let direct = direct_next_day_eval(
            &ckpt.to_model().unwrap(),
            &test,
            1,
            mix_seed(cfg.seed, BOOTSTRAP_SALT),
        )
        .unwrap();
        // The zero projection makes the pooled context inert, so every
        // number — including the bootstrap interval — matches exactly.
        assert_eq!(tuned.report, direct);
        assert!(tuned.train_curve.is_empty());
    }

    #[test]
    fn finetune_decreases_the_train_loss() {
        let (train, test) = tiny_splits(2);
        let ckpt = untrained_checkpoint(&train, Ablation::default());
        let cfg = FinetuneConfig {
            epochs: 3,
            seed: 4,
            adam: AdamConfig { learning_rate: 3e-3, ..AdamConfig::default() },
            ..FinetuneConfig::default()
        };
        let tuned = finetune_next_day(&ckpt, &train, &test, &cfg, InitMode::Pretrained).unwrap();
        assert_eq!(tuned.train_curve.len(), 3);
        assert!(
            tuned.train_curve[2] < tuned.train_curve[0],
            "curve {:?} should decrease",
            tuned.train_curve
        );
        assert!(tuned.report.n_slots > 0);
    }

    #[test]
    fn random_init_uses_a_fresh_backbone() {
        let (train, _) = tiny_splits(3);
        let ckpt = untrained_checkpoint(&train, Ablation::default());
        let pretrained = Predictor::next_day(&ckpt, InitMode::Pretrained, 7).unwrap();
        let random = Predictor::next_day(&ckpt, InitMode::RandomInit, 7).unwrap();
        let stored = ckpt.tensor_by_name("activity_table").unwrap();
        let from_ckpt = pretrained.model.store.get(pretrained.model.params.activity_table);
        let fresh = random.model.store.get(random.model.params.activity_table);
        assert_eq!(from_ckpt.data(), stored.data());
        assert_ne!(fresh.data(), stored.data());
        assert_eq!(fresh.shape(), stored.shape());
    }

    #[test]
    fn pairwise_checkpoint_gets_fresh_next_day_machinery() {
        let (train, _) = tiny_splits(4);
        let ablation = Ablation { diagnosis_as_activity: false, pairwise_day_task: true };
        let ckpt = untrained_checkpoint(&train, ablation);
        assert!(ckpt.tensor_by_name("pairwise_head.w").is_some());
        assert!(ckpt.tensor_by_name("lstm.fwd.w_x").is_none());

        let predictor = Predictor::next_day(&ckpt, InitMode::Pretrained, 7).unwrap();
        let store = &predictor.model.store;
        // Shared weights came from the checkpoint…
        let table = store.get(predictor.model.params.activity_table);
        assert_eq!(table.data(), ckpt.tensor_by_name("activity_table").unwrap().data());
        // …the next-day machinery exists fresh, and the pairwise head is gone.
        assert!(store.id_by_name("lstm.fwd.w_x").is_some());
        assert!(store.id_by_name("next_head.w").is_some());
        assert!(store.id_by_name("pairwise_head.w").is_none());
        let lstm = store.get(store.id_by_name("lstm.fwd.w_x").unwrap());
        assert!(lstm.data().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn los_initial_loss_matches_remaining_variance_oracle() {
        let (train, test) = tiny_splits(5);
        let ckpt = untrained_checkpoint(&train, Ablation::default());
        let cfg = FinetuneConfig { epochs: 1, seed: 6, ..FinetuneConfig::default() };
        let tuned = finetune_los(&ckpt, &train, &test, &cfg, InitMode::Pretrained).unwrap();
        // Zero-initialized head predicts 0 everywhere during the first epoch's
        // measurements, so the epoch-mean train loss is the mean over eligible
        // visits of the per-visit mean squared remaining LOS.
        let eligible = eligible_visits(&train);
        let oracle: f64 = eligible
            .iter()
            .map(|&i| {
                let v = &train.visits[i];
                (1..v.los()).map(|p| ((v.los() - p) as f64).powi(2)).sum::<f64>()
                    / (v.los() - 1) as f64
            })
            .sum::<f64>()
            / eligible.len() as f64;
        assert!(
            (tuned.train_curve[0] - oracle).abs() < 1e-9,
            "{} vs oracle {oracle}",
            tuned.train_curve[0]
        );

        // Baseline RMSE equals the hand-computed constant-mean error.
        let train_targets = remaining_targets(&train);
        let constant = train_targets.iter().sum::<f64>() / train_targets.len() as f64;
        let test_targets = remaining_targets(&test);
        let oracle_rmse = (test_targets.iter().map(|t| (t - constant).powi(2)).sum::<f64>()
            / test_targets.len() as f64)
            .sqrt();
        assert!((tuned.report.baseline_rmse - oracle_rmse).abs() < 1e-12);
        assert_eq!(tuned.report.n_slots, test_targets.len());
    }

    #[test]
    fn los_curve_decreases_over_epochs() {
        let (train, test) = tiny_splits(6);
        let ckpt = untrained_checkpoint(&train, Ablation::default());
        let cfg = FinetuneConfig {
            epochs: 3,
            seed: 7,
            adam: AdamConfig { learning_rate: 1e-2, ..AdamConfig::default() },
            ..FinetuneConfig::default()
        };
        let tuned = finetune_los(&ckpt, &train, &test, &cfg, InitMode::Pretrained).unwrap();
        assert!(
            tuned.train_curve[2] < tuned.train_curve[0],
            "curve {:?} should decrease",
            tuned.train_curve
        );
        let (lo, hi) = tuned.report.ci_rmse;
        assert!(lo <= tuned.report.rmse && tuned.report.rmse <= hi);
    }

    #[test]
    fn direct_eval_is_thread_invariant() {
        let (train, test) = tiny_splits(7);
        let ckpt = untrained_checkpoint(&train, Ablation::default());
        let model = ckpt.to_model().unwrap();
        let one = direct_next_day_eval(&model, &test, 1, 9).unwrap();
        let four = direct_next_day_eval(&model, &test, 4, 9).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn finetune_rejects_a_foreign_cohort() {
        let (train, test) = tiny_splits(8);
        let (other, _) =
            generate_synthetic(&SyntheticSpec::with_counts(25, 10, 2, 3, 2, 99)).unwrap();
        let ckpt = untrained_checkpoint(&train, Ablation::default());
        let err = finetune_next_day(
            &ckpt,
            &other,
            &test,
            &FinetuneConfig::default(),
            InitMode::Pretrained,
        )
        .unwrap_err();
        assert!(matches!(err, TrainError::DigestMismatch { .. }), "{err}");
    }
}
