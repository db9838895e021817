//! `i2v pretrain`: filter, split, pretrain, and write the checkpoint.

use std::fs;

use inpatient2vec::corpus::split_cohort;
use inpatient2vec::training::{self, save_checkpoint, write_log_csv};

use super::load_filtered;
use crate::{AblationFlag, CliError, PretrainArgs};

pub fn pretrain(args: PretrainArgs) -> Result<(), CliError> {
    let mut r = args.common.resolve()?;
    if let Some(v) = args.epochs {
        r.train.epochs = v;
    }
    if let Some(v) = args.batch_size {
        r.train.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        r.train.adam.learning_rate = v;
    }
    if let Some(v) = args.mask_rate {
        r.train.mask_rate = v;
    }
    if let Some(v) = args.dim {
        r.model.embed_dim = v;
    }
    if let Some(v) = args.heads {
        r.model.n_heads = v;
    }
    if let Some(v) = args.layers {
        r.model.n_layers = v;
    }
    if let Some(v) = args.ff_dim {
        r.model.ff_dim = v;
    }
    if let Some(v) = args.lstm_hidden {
        r.model.lstm_hidden = v;
    }
    for flag in &args.ablation {
        match flag {
            AblationFlag::DiagAsActivity => r.train.ablation.diagnosis_as_activity = true,
            AblationFlag::PairwiseDay => r.train.ablation.pairwise_day_task = true,
        }
    }
    if args.next_day_sigmoid {
        r.train.next_day_sigmoid = true;
    }
    if args.unmasked_day_reps {
        r.train.unmasked_day_reps = true;
    }
    r.model.validate()?;
    r.train.validate()?;

    let filtered = load_filtered(&args.cohort, &r.filter)?;
    let (train, valid, test) = split_cohort(&filtered, &r.split)?;
    if train.visits.is_empty() || valid.visits.is_empty() {
        return Err(CliError::usage(
            "split produced an empty train or validation set; adjust the split ratios",
        ));
    }
    println!("seed: {}", r.seed);
    println!(
        "admissions after filter: {} (train {}, valid {}, test {})",
        filtered.visits.len(),
        train.visits.len(),
        valid.visits.len(),
        test.visits.len()
    );

    let out = training::pretrain(&train, &valid, r.model, &r.train)?;
    fs::create_dir_all(&args.out_dir)?;
    let ckpt_path = args.out_dir.join("checkpoint.bin");
    let log_path = args.out_dir.join("training_log.csv");
    save_checkpoint(&ckpt_path, &out.checkpoint)?;
    write_log_csv(&log_path, &out.checkpoint.log)?;

    for row in &out.checkpoint.log {
        println!(
            "epoch {:>3}  train {:.4}  valid {:.4}  (mask {:.4}, next {:.4})",
            row.epoch, row.train_loss, row.valid_loss, row.mask_loss, row.next_loss
        );
    }
    println!("best epoch: {}", out.checkpoint.best_epoch);
    println!("checkpoint: {}", ckpt_path.display());
    println!("log: {}", log_path.display());
    Ok(())
}
