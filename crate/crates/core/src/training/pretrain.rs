//! The pretraining loop: per-epoch mask plans, visit batches, Adam updates,
//! and best-validation checkpoint selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Cohort;
use crate::model::{Model, ModelConfig};
use crate::tensor::{AdamState, Tensor};

use super::{
    batch_backward, eval_split, mix_seed, select_masks, total_loss, Checkpoint, EpochLog,
    ForwardSettings, PretrainConfig, TrainError, BATCH_ORDER_SALT, VALID_PLAN_SALT,
};

pub struct PretrainOutput {
    /// Model holding the parameters of the best-validation epoch.
    pub model: Model,
    pub checkpoint: Checkpoint,
}

fn snapshot(model: &Model) -> Vec<Tensor> {
    model.store.ids().map(|id| model.store.get(id).clone()).collect()
}

fn restore(model: &mut Model, params: &[Tensor]) {
    let ids: Vec<_> = model.store.ids().collect();
    for (id, tensor) in ids.into_iter().zip(params) {
        model.store.set(id, tensor.clone()).expect("snapshot shapes match");
    }
}

fn ensure_finite(value: f64, epoch: usize, batch: usize) -> Result<(), TrainError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(TrainError::Diverged { epoch, batch, what: format!("loss = {value}") })
    }
}

/// Pretrains a fresh model on `train`, logging a loss row per epoch (row 0 is
/// the untrained model) and returning the parameters of the epoch with the
/// lowest validation loss. Fully deterministic given the config seed; the
/// `threads` knob changes wall-clock only, never results.
///
/// The epoch-`e` masking plan is drawn with seed `cfg.seed + e`; the
/// validation plan is drawn once from a salted seed and reused for every row,
/// so validation losses are comparable across epochs.
pub fn pretrain(
    train: &Cohort,
    valid: &Cohort,
    model_config: ModelConfig,
    cfg: &PretrainConfig,
) -> Result<PretrainOutput, TrainError> {
    cfg.validate()?;
    if train.visits.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    if train.vocabulary != valid.vocabulary {
        return Err(TrainError::VocabularyMismatch);
    }

    let mut model = Model::new(model_config, cfg.ablation, train.vocabulary.clone(), cfg.seed)?;
    let mut adam = AdamState::new(&model.store, cfg.adam);
    let valid_plan = select_masks(valid, cfg.mask_rate, mix_seed(cfg.seed, VALID_PLAN_SALT))?;
    // Validation uses the epoch-0 settings derivation throughout so the
    // pairwise ablation's validation pairs stay fixed across epochs.
    let val_settings = ForwardSettings::from_config(cfg, 0);
    let train_indices: Vec<usize> = (0..train.visits.len()).collect();

    let mut log: Vec<EpochLog> = Vec::with_capacity(cfg.epochs + 1);
    let plan0 = select_masks(train, cfg.mask_rate, cfg.seed)?;
    let train0 = total_loss(
        &model,
        train,
        &train_indices,
        Some(&plan0),
        ForwardSettings::from_config(cfg, 0),
        cfg.threads,
    );
    let val0 = eval_split(&model, valid, &valid_plan, val_settings, cfg.threads);
    ensure_finite(train0.total, 0, 0)?;
    ensure_finite(val0.total, 0, 0)?;
    log.push(EpochLog {
        epoch: 0,
        train_loss: train0.total,
        valid_loss: val0.total,
        mask_loss: val0.masked,
        next_loss: val0.next,
    });

    let mut best_epoch = 0usize;
    let mut best_val = val0.total;
    let mut best_params = snapshot(&model);

    for epoch in 1..=cfg.epochs {
        let plan = select_masks(train, cfg.mask_rate, cfg.seed.wrapping_add(epoch as u64))?;
        let settings = ForwardSettings::from_config(cfg, epoch);
        let mut order = train_indices.clone();
        let order_seed = mix_seed(mix_seed(cfg.seed, BATCH_ORDER_SALT), epoch as u64);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));

        let mut weighted = 0.0;
        let mut n_seen = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (grads, loss) =
                batch_backward(&model, train, batch, &plan, settings, cfg.threads).map_err(
                    |err| TrainError::Diverged { epoch, batch: b, what: err.to_string() },
                )?;
            ensure_finite(loss.total, epoch, b)?;
            adam.step(&mut model.store, &grads);
            weighted += loss.total * batch.len() as f64;
            n_seen += batch.len();
        }
        let train_loss = weighted / n_seen as f64;
        let val = eval_split(&model, valid, &valid_plan, val_settings, cfg.threads);
        ensure_finite(val.total, epoch, 0)?;
        log.push(EpochLog {
            epoch,
            train_loss,
            valid_loss: val.total,
            mask_loss: val.masked,
            next_loss: val.next,
        });
        if val.total < best_val {
            best_val = val.total;
            best_epoch = epoch;
            best_params = snapshot(&model);
        }
    }

    restore(&mut model, &best_params);
    let checkpoint = Checkpoint::from_model(&model, cfg, log, best_epoch);
    Ok(PretrainOutput { model, checkpoint })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, split_cohort, SplitConfig, SyntheticSpec};
    use crate::tensor::AdamConfig;

    fn tiny_splits(seed: u64) -> (Cohort, Cohort) {
        let spec = SyntheticSpec::with_counts(40, 15, 3, 5, 2, seed);
        let (cohort, _) = generate_synthetic(&spec).unwrap();
        let split = SplitConfig { train: 0.7, valid: 0.3, test: 0.0, seed };
        let (train, valid, _test) = split_cohort(&cohort, &split).unwrap();
        (train, valid)
    }

    fn tiny_model_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 8,
            n_heads: 2,
            n_layers: 1,
            ff_dim: 16,
            lstm_hidden: 6,
            init_std: 0.02,
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters_and_validation() {
        let (train, valid) = tiny_splits(1);
        let cfg = PretrainConfig {
            epochs: 3,
            batch_size: 8,
            adam: AdamConfig { learning_rate: 0.0, ..AdamConfig::default() },
            seed: 5,
            threads: 2,
            ..PretrainConfig::default()
        };
        let fresh = Model::new(tiny_model_config(), cfg.ablation, train.vocabulary.clone(), 5)
            .unwrap();
        let out = pretrain(&train, &valid, tiny_model_config(), &cfg).unwrap();
        for (id, name, tensor) in fresh.store.iter() {
            assert_eq!(
                tensor.data(),
                out.model.store.get(id).data(),
                "parameter {name} moved at lr = 0"
            );
        }
        let first_val = out.checkpoint.log[0].valid_loss;
        for row in &out.checkpoint.log {
            assert_eq!(row.valid_loss, first_val, "fixed plan + frozen model = flat validation");
        }
    }

    #[test]
    fn one_small_step_decreases_the_same_batch_loss() {
        let (train, _valid) = tiny_splits(2);
        let model_config = tiny_model_config();
        let mut model =
            Model::new(model_config, Default::default(), train.vocabulary.clone(), 3).unwrap();
        let plan = select_masks(&train, 0.15, 11).unwrap();
        let indices: Vec<usize> = (0..train.visits.len()).collect();
        let settings = ForwardSettings::plain();
        let before = total_loss(&model, &train, &indices, Some(&plan), settings, 1);
        let (grads, at_start) =
            batch_backward(&model, &train, &indices, &plan, settings, 1).unwrap();
        assert_eq!(before.total, at_start.total);
        let mut adam = AdamState::new(
            &model.store,
            AdamConfig { learning_rate: 1e-6, weight_decay: 0.0, ..AdamConfig::default() },
        );
        adam.step(&mut model.store, &grads);
        let after = total_loss(&model, &train, &indices, Some(&plan), settings, 1);
        assert!(
            after.total < before.total,
            "small step must descend: {} -> {}",
            before.total,
            after.total
        );
    }

    #[test]
    fn same_seed_and_any_thread_count_reproduce_training_exactly() {
        let (train, valid) = tiny_splits(3);
        let cfg = PretrainConfig {
            epochs: 2,
            batch_size: 8,
            adam: AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() },
            seed: 9,
            threads: 1,
            ..PretrainConfig::default()
        };
        let a = pretrain(&train, &valid, tiny_model_config(), &cfg).unwrap();
        let b = pretrain(&train, &valid, tiny_model_config(), &cfg).unwrap();
        let c = pretrain(
            &train,
            &valid,
            tiny_model_config(),
            &PretrainConfig { threads: 3, ..cfg },
        )
        .unwrap();
        assert_eq!(a.checkpoint.log, b.checkpoint.log);
        assert_eq!(a.checkpoint.log, c.checkpoint.log);
        for (id, name, tensor) in a.model.store.iter() {
            assert_eq!(tensor.data(), b.model.store.get(id).data(), "{name} differs (rerun)");
            assert_eq!(tensor.data(), c.model.store.get(id).data(), "{name} differs (threads)");
        }
    }

    #[test]
    fn exploding_learning_rate_reports_divergence() {
        let (train, valid) = tiny_splits(4);
        let cfg = PretrainConfig {
            epochs: 3,
            batch_size: 4,
            adam: AdamConfig { learning_rate: 1e18, ..AdamConfig::default() },
            seed: 2,
            ..PretrainConfig::default()
        };
        match pretrain(&train, &valid, tiny_model_config(), &cfg) {
            Err(TrainError::Diverged { .. }) => {}
            Err(other) => panic!("expected divergence, got error: {other}"),
            Ok(_) => panic!("expected divergence, training succeeded"),
        }
    }

    #[test]
    fn best_epoch_is_the_validation_argmin_and_is_what_returns() {
        let (train, valid) = tiny_splits(5);
        let cfg = PretrainConfig {
            epochs: 3,
            batch_size: 8,
            adam: AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() },
            seed: 21,
            threads: 2,
            ..PretrainConfig::default()
        };
        let out = pretrain(&train, &valid, tiny_model_config(), &cfg).unwrap();
        let log = &out.checkpoint.log;
        let argmin = log
            .iter()
            .min_by(|a, b| a.valid_loss.partial_cmp(&b.valid_loss).unwrap())
            .unwrap()
            .epoch;
        assert_eq!(out.checkpoint.best_epoch, argmin);

        // The returned parameters must reproduce that epoch's validation loss.
        let valid_plan =
            select_masks(&valid, cfg.mask_rate, mix_seed(cfg.seed, VALID_PLAN_SALT)).unwrap();
        let val = eval_split(
            &out.model,
            &valid,
            &valid_plan,
            ForwardSettings::from_config(&cfg, 0),
            1,
        );
        assert_eq!(val.total, log[argmin].valid_loss);
    }

    #[test]
    fn short_training_improves_validation_on_the_tiny_cohort() {
        let (train, valid) = tiny_splits(6);
        let cfg = PretrainConfig {
            epochs: 4,
            batch_size: 8,
            adam: AdamConfig { learning_rate: 3e-3, ..AdamConfig::default() },
            seed: 1,
            threads: 2,
            ..PretrainConfig::default()
        };
        let out = pretrain(&train, &valid, tiny_model_config(), &cfg).unwrap();
        let log = &out.checkpoint.log;
        assert!(
            log.last().unwrap().valid_loss < log[0].valid_loss,
            "validation should improve: {} -> {}",
            log[0].valid_loss,
            log.last().unwrap().valid_loss
        );
    }

    #[test]
    fn pairwise_ablation_trains_and_beats_coin_flipping() {
        let (train, valid) = tiny_splits(7);
        let cfg = PretrainConfig {
            epochs: 4,
            batch_size: 8,
            adam: AdamConfig { learning_rate: 3e-3, ..AdamConfig::default() },
            seed: 4,
            threads: 2,
            ablation: crate::model::Ablation {
                diagnosis_as_activity: false,
                pairwise_day_task: true,
            },
            ..PretrainConfig::default()
        };
        let out = pretrain(&train, &valid, tiny_model_config(), &cfg).unwrap();
        let log = &out.checkpoint.log;
        // The day-task component starts near ln 2 and must drop below it.
        assert!((log[0].next_loss - std::f64::consts::LN_2).abs() < 0.05);
        assert!(log.last().unwrap().next_loss < std::f64::consts::LN_2);
    }
}
