//! `i2v finetune`: fine-tune a checkpoint for next-day prediction or
//! remaining length of stay, report on the held-out test split.

use std::fs;

use serde::Serialize;

use inpatient2vec::corpus::split_cohort;
use inpatient2vec::eval::{finetune_los, finetune_next_day, InitMode};
use inpatient2vec::training::load_checkpoint;
use inpatient2vec::{LosReport, RecallReport};

use super::load_filtered;
use crate::{CliError, FinetuneArgs, InitFlag, TaskFlag};

#[derive(Serialize)]
struct Artifact<'a, R: Serialize> {
    seed: u64,
    task: &'a str,
    init: &'a str,
    epochs: usize,
    /// Mean train loss per fine-tuning epoch.
    train_curve: &'a [f64],
    report: &'a R,
}

fn write_artifact<R: Serialize>(
    path: &std::path::Path,
    artifact: &Artifact<'_, R>,
) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(artifact)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn finetune(args: FinetuneArgs) -> Result<(), CliError> {
    let mut r = args.common.resolve()?;
    if let Some(v) = args.epochs {
        r.finetune.epochs = v;
    }
    if let Some(v) = args.batch_size {
        r.finetune.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        r.finetune.adam.learning_rate = v;
    }
    r.finetune.validate()?;

    let ckpt = load_checkpoint(&args.checkpoint)?;
    let filtered = load_filtered(&args.cohort, &r.filter)?;
    ckpt.ensure_matches(&filtered)?;
    let (train, _valid, test) = split_cohort(&filtered, &r.split)?;
    if train.visits.is_empty() || test.visits.is_empty() {
        return Err(CliError::usage(
            "split produced an empty train or test set; adjust the split ratios",
        ));
    }

    let init = match args.init {
        InitFlag::Pretrained => InitMode::Pretrained,
        InitFlag::Random => InitMode::RandomInit,
    };
    let init_name = match args.init {
        InitFlag::Pretrained => "pretrained",
        InitFlag::Random => "random",
    };
    fs::create_dir_all(&args.out_dir)?;
    let report_path = args.out_dir.join("finetune_report.json");
    println!("seed: {}", r.seed);

    match args.task {
        TaskFlag::NextDay => {
            let out = finetune_next_day(&ckpt, &train, &test, &r.finetune, init)?;
            let report: &RecallReport = &out.report;
            write_artifact(
                &report_path,
                &Artifact {
                    seed: r.seed,
                    task: "next-day",
                    init: init_name,
                    epochs: r.finetune.epochs,
                    train_curve: &out.train_curve,
                    report,
                },
            )?;
            println!(
                "next-day recall@A {:.4} (95% CI [{:.4}, {:.4}])  @5 {:.4}  @10 {:.4}  @20 {:.4}  slots {}",
                report.recall_at_a,
                report.ci_recall_at_a.0,
                report.ci_recall_at_a.1,
                report.recall_at_5,
                report.recall_at_10,
                report.recall_at_20,
                report.n_slots
            );
        }
        TaskFlag::Los => {
            let out = finetune_los(&ckpt, &train, &test, &r.finetune, init)?;
            let report: &LosReport = &out.report;
            write_artifact(
                &report_path,
                &Artifact {
                    seed: r.seed,
                    task: "los",
                    init: init_name,
                    epochs: r.finetune.epochs,
                    train_curve: &out.train_curve,
                    report,
                },
            )?;
            println!(
                "remaining-LOS rmse {:.4} (95% CI [{:.4}, {:.4}])  constant-mean baseline {:.4}  slots {}",
                report.rmse, report.ci_rmse.0, report.ci_rmse.1, report.baseline_rmse, report.n_slots
            );
        }
    }
    println!("report: {}", report_path.display());
    Ok(())
}
