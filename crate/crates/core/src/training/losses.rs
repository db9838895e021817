//! Loss construction for the two pretraining tasks, evaluated per visit so
//! batches can parallelize with a fixed reduction order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Cohort, Visit};
use crate::model::Model;
use crate::tensor::{Gradients, Graph, NodeId, Tensor};
use crate::util::run_indexed;

use super::{mix_seed, MaskingPlan, PretrainConfig, TrainError, PAIRWISE_SALT};

/// Forward-pass switches derived from [`PretrainConfig`] for one epoch.
#[derive(Debug, Clone, Copy)]
pub struct ForwardSettings {
    pub next_day_sigmoid: bool,
    pub unmasked_day_reps: bool,
    /// `Some(base)` replaces the next-day task with pairwise consecutive-day
    /// classification; per-visit sampling seeds derive from `base` and the
    /// visit index.
    pub pairwise_seed_base: Option<u64>,
}

impl ForwardSettings {
    pub fn from_config(cfg: &PretrainConfig, epoch: usize) -> ForwardSettings {
        ForwardSettings {
            next_day_sigmoid: cfg.next_day_sigmoid,
            unmasked_day_reps: cfg.unmasked_day_reps,
            pairwise_seed_base: cfg
                .ablation
                .pairwise_day_task
                .then(|| mix_seed(mix_seed(cfg.seed, PAIRWISE_SALT), epoch as u64)),
        }
    }

    /// Plain evaluation settings (next-day task, multi-hot softmax target).
    pub fn plain() -> ForwardSettings {
        ForwardSettings {
            next_day_sigmoid: false,
            unmasked_day_reps: false,
            pairwise_seed_base: None,
        }
    }
}

/// Scalar loss nodes produced by one visit's forward pass.
struct VisitOutcome {
    /// Mean cross-entropy over this visit's masked tokens, with the count.
    mask_ce: Option<(NodeId, usize)>,
    /// Day-level task loss (next-day CE or pairwise BCE), mean within visit.
    task_ce: Option<NodeId>,
}

/// The same components as plain numbers.
#[derive(Debug, Clone, Copy)]
struct VisitValues {
    mask: Option<(f64, usize)>,
    task: Option<f64>,
}

/// Batch-level loss values. `masked` is the mean over every masked token in
/// the batch; `next` is the mean over visits of the day-level task loss;
/// `total` is their 1:1 sum. A component with nothing to average is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub masked: f64,
    pub next: f64,
    pub n_masked_tokens: usize,
    pub n_task_visits: usize,
}

/// Builds the forward graph for one visit and returns its loss nodes.
fn visit_forward(
    model: &Model,
    g: &mut Graph,
    visit: &Visit,
    visit_idx: usize,
    plan: Option<&MaskingPlan>,
    settings: &ForwardSettings,
) -> VisitOutcome {
    let n_act = model.vocabulary.n_activities();
    let mut day_reps: Vec<NodeId> = Vec::with_capacity(visit.los());
    let mut mask_blocks: Vec<NodeId> = Vec::new();
    let mut mask_targets: Vec<Vec<f64>> = Vec::new();

    for (d, day) in visit.days.iter().enumerate() {
        let t = d + 1;
        let masked =
            plan.and_then(|p| p.masked_positions(visit_idx, d)).filter(|s| !s.is_empty());
        let input = model.assemble_input_sequence(g, day, visit.diagnosis, t, masked);
        let out = model.encode_day(g, input, None);
        if let Some(set) = masked {
            let rows: Vec<usize> = set.iter().map(|&p| p + 1).collect();
            mask_blocks.push(g.select_rows(out.per_token, &rows));
            for &p in set {
                let mut row = vec![0.0; n_act];
                row[day[p] as usize] = 1.0;
                mask_targets.push(row);
            }
        }
        let rep = if masked.is_some() && settings.unmasked_day_reps {
            let clean = model.assemble_input_sequence(g, day, visit.diagnosis, t, None);
            model.encode_day(g, clean, None).t_cls
        } else {
            out.t_cls
        };
        day_reps.push(rep);
    }

    let mask_ce = if mask_blocks.is_empty() {
        None
    } else {
        let stacked = g.concat_rows(&mask_blocks);
        let logits = model.masked_head(g, stacked);
        let target = g.constant(Tensor::from_rows(&mask_targets).expect("uniform row width"));
        Some((g.cross_entropy(logits, target), mask_targets.len()))
    };

    let task_ce = if visit.los() < 2 {
        None
    } else if let Some(base) = settings.pairwise_seed_base {
        let seed = mix_seed(base, visit_idx as u64);
        Some(pairwise_loss_for_visit(model, g, visit, &day_reps, seed))
    } else {
        Some(next_day_ce(model, g, visit, &day_reps, settings.next_day_sigmoid))
    };

    VisitOutcome { mask_ce, task_ce }
}

/// Next-day loss for one visit given its day representations: mean over
/// targets `t = 2..=LOS` of cross-entropy against the normalized multi-hot
/// of day `t` (or sigmoid BCE against the raw multi-hot).
fn next_day_ce(
    model: &Model,
    g: &mut Graph,
    visit: &Visit,
    day_reps: &[NodeId],
    sigmoid: bool,
) -> NodeId {
    let states = model.prefix_states(g, day_reps);
    let h = g.concat_rows(&states);
    let logits = model.next_day_head(g, h);
    let n_act = model.vocabulary.n_activities();
    let mut rows = Vec::with_capacity(states.len());
    for target_day in &visit.days[1..] {
        let mut row = vec![0.0; n_act];
        let w = if sigmoid { 1.0 } else { 1.0 / target_day.len() as f64 };
        for &a in target_day {
            row[a as usize] = w;
        }
        rows.push(row);
    }
    let target = g.constant(Tensor::from_rows(&rows).expect("uniform row width"));
    if sigmoid {
        g.multi_label_loss(logits, target)
    } else {
        g.cross_entropy(logits, target)
    }
}

/// Ordered day pairs for the pairwise task: `(a, b, label)` with 0-based day
/// indices, label true iff `b == a + 1`. Positives and negatives are drawn
/// with equal probability.
pub(crate) fn sample_day_pairs(
    los: usize,
    n_pairs: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize, bool)> {
    debug_assert!(los >= 2, "pairs need at least two days");
    let mut out = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        if rng.random_bool(0.5) {
            let a = rng.random_range(0..los - 1);
            out.push((a, a + 1, true));
        } else {
            loop {
                let a = rng.random_range(0..los);
                let b = rng.random_range(0..los);
                if a != b && b != a + 1 {
                    out.push((a, b, false));
                    break;
                }
            }
        }
    }
    out
}

/// Mean binary cross-entropy of the pairwise head over explicit day pairs.
fn pairwise_bce(
    model: &Model,
    g: &mut Graph,
    day_reps: &[NodeId],
    pairs: &[(usize, usize, bool)],
) -> NodeId {
    assert!(!pairs.is_empty());
    let mut rows_a = Vec::with_capacity(pairs.len());
    let mut rows_b = Vec::with_capacity(pairs.len());
    let mut labels = Vec::with_capacity(pairs.len());
    for &(a, b, positive) in pairs {
        rows_a.push(day_reps[a]);
        rows_b.push(day_reps[b]);
        labels.push(if positive { 1.0 } else { 0.0 });
    }
    let ha = g.concat_rows(&rows_a);
    let hb = g.concat_rows(&rows_b);
    let logits = model.pairwise_head(g, ha, hb);
    let n = labels.len();
    let target = g.constant(Tensor::from_vec(&[n, 1], labels).expect("label column"));
    g.multi_label_loss(logits, target)
}

fn pairwise_loss_for_visit(
    model: &Model,
    g: &mut Graph,
    visit: &Visit,
    day_reps: &[NodeId],
    seed: u64,
) -> NodeId {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = sample_day_pairs(visit.los(), visit.los() - 1, &mut rng);
    pairwise_bce(model, g, day_reps, &pairs)
}

/// Denominators shared by every visit in a batch, fixed before any graph is
/// built so per-visit work stays independent.
struct BatchShape {
    sum_masked: usize,
    n_task: usize,
}

fn batch_shape(cohort: &Cohort, indices: &[usize], plan: Option<&MaskingPlan>) -> BatchShape {
    let sum_masked = match plan {
        None => 0,
        Some(p) => indices.iter().map(|&v| p.masked_in_visit(v)).sum(),
    };
    let n_task = indices.iter().filter(|&&v| cohort.visits[v].los() >= 2).count();
    BatchShape { sum_masked, n_task }
}

fn outcome_values(g: &Graph, outcome: &VisitOutcome) -> VisitValues {
    VisitValues {
        mask: outcome.mask_ce.map(|(node, m)| (g.value(node).scalar_value(), m)),
        task: outcome.task_ce.map(|node| g.value(node).scalar_value()),
    }
}

/// Folds per-visit values (in visit order) into batch components.
fn fold_values(values: &[VisitValues], shape: &BatchShape) -> BatchLoss {
    let mut mask_acc = 0.0;
    let mut task_acc = 0.0;
    for v in values {
        if let Some((val, m)) = v.mask {
            mask_acc += val * m as f64;
        }
        if let Some(t) = v.task {
            task_acc += t;
        }
    }
    let masked = if shape.sum_masked > 0 { mask_acc / shape.sum_masked as f64 } else { 0.0 };
    let next = if shape.n_task > 0 { task_acc / shape.n_task as f64 } else { 0.0 };
    BatchLoss {
        total: masked + next,
        masked,
        next,
        n_masked_tokens: shape.sum_masked,
        n_task_visits: shape.n_task,
    }
}

/// Combined batch loss (masked + day-level task at 1:1), forward only.
pub fn total_loss(
    model: &Model,
    cohort: &Cohort,
    indices: &[usize],
    plan: Option<&MaskingPlan>,
    settings: ForwardSettings,
    threads: usize,
) -> BatchLoss {
    let shape = batch_shape(cohort, indices, plan);
    let values = run_indexed(threads, indices.len(), |slot| {
        let idx = indices[slot];
        let mut g = Graph::new();
        let outcome = visit_forward(model, &mut g, &cohort.visits[idx], idx, plan, &settings);
        outcome_values(&g, &outcome)
    });
    fold_values(&values, &shape)
}

/// Forward-only loss over an entire split (used for validation rows).
pub fn eval_split(
    model: &Model,
    cohort: &Cohort,
    plan: &MaskingPlan,
    settings: ForwardSettings,
    threads: usize,
) -> BatchLoss {
    let indices: Vec<usize> = (0..cohort.visits.len()).collect();
    total_loss(model, cohort, &indices, Some(plan), settings, threads)
}

/// Mean masked-activity cross-entropy over every masked token in the listed
/// visits. Errors when the plan masks nothing there.
pub fn loss_masked(
    model: &Model,
    cohort: &Cohort,
    indices: &[usize],
    plan: &MaskingPlan,
) -> Result<f64, TrainError> {
    let loss = total_loss(model, cohort, indices, Some(plan), ForwardSettings::plain(), 1);
    if loss.n_masked_tokens == 0 {
        return Err(TrainError::NoMaskedTokens);
    }
    Ok(loss.masked)
}

/// Next-day loss for a single visit from unmasked day representations: mean
/// over `t = 2..=LOS` of cross-entropy between the predicted distribution
/// and day `t`'s normalized activity multi-hot.
pub fn loss_next_day(model: &Model, visit: &Visit, sigmoid: bool) -> Result<f64, TrainError> {
    if visit.los() < 2 {
        return Err(TrainError::NoEligibleVisits);
    }
    let mut g = Graph::new();
    let settings = ForwardSettings { next_day_sigmoid: sigmoid, ..ForwardSettings::plain() };
    let outcome = visit_forward(model, &mut g, visit, 0, None, &settings);
    let node = outcome.task_ce.expect("los >= 2 always yields a task loss");
    Ok(g.value(node).scalar_value())
}

/// Pairwise consecutive-day loss over the listed visits (ablation task):
/// mean over eligible visits of the per-visit mean pair BCE.
pub fn loss_pairwise_days(
    model: &Model,
    cohort: &Cohort,
    indices: &[usize],
    seed: u64,
) -> Result<f64, TrainError> {
    let settings = ForwardSettings {
        next_day_sigmoid: false,
        unmasked_day_reps: false,
        pairwise_seed_base: Some(seed),
    };
    let loss = total_loss(model, cohort, indices, None, settings, 1);
    if loss.n_task_visits == 0 {
        return Err(TrainError::NoEligibleVisits);
    }
    Ok(loss.next)
}

/// Forward + backward over one batch: returns the gradient of the batch
/// loss (`masked + task`) and its value. Per-visit graphs are independent;
/// gradients merge in visit order, so results do not depend on `threads`.
pub fn batch_backward(
    model: &Model,
    cohort: &Cohort,
    indices: &[usize],
    plan: &MaskingPlan,
    settings: ForwardSettings,
    threads: usize,
) -> Result<(Gradients, BatchLoss), TrainError> {
    let shape = batch_shape(cohort, indices, Some(plan));
    let results = run_indexed(threads, indices.len(), |slot| {
        let idx = indices[slot];
        let mut g = Graph::new();
        let outcome = visit_forward(model, &mut g, &cohort.visits[idx], idx, Some(plan), &settings);
        let values = outcome_values(&g, &outcome);
        let mut parts: Vec<NodeId> = Vec::new();
        if let Some((ce, m)) = outcome.mask_ce {
            if shape.sum_masked > 0 {
                parts.push(g.scale(ce, m as f64 / shape.sum_masked as f64));
            }
        }
        if let Some(task) = outcome.task_ce {
            if shape.n_task > 0 {
                parts.push(g.scale(task, 1.0 / shape.n_task as f64));
            }
        }
        let grads = if parts.is_empty() {
            Ok(Gradients::default())
        } else {
            let visit_total = g.add_n(&parts);
            g.backward(visit_total)
        };
        grads.map(|gr| (gr, values))
    });

    let mut grads = Gradients::default();
    let mut values = Vec::with_capacity(results.len());
    for result in results {
        let (visit_grads, visit_values) = result?;
        grads.add_assign(&visit_grads);
        values.push(visit_values);
    }
    Ok((grads, fold_values(&values, &shape)))
}
