//! `i2v eval`: the four evaluations over a frozen checkpoint, written as one
//! JSON report, an aligned text table, and intrusion worksheets.

use std::collections::BTreeSet;
use std::fs;

use serde::Serialize;

use inpatient2vec::corpus::{load_ground_truth, split_cohort, GroundTruth};
use inpatient2vec::eval::{
    activity_cluster_ids, activity_embeddings, build_intrusion_sets,
    contextual_activity_embeddings, diagnosis_family_ids, diagnosis_vectors, finetune_los,
    finetune_next_day, frequency_baseline, kmeans, nmi, oracle_intrusion, shuffled_labels,
    write_intrusion_worksheets, ClusteringSummary, DiagnosisVectorMode, InitMode,
    IntrusionSummary, MethodRow,
};
use inpatient2vec::training::{load_checkpoint, mix_seed};
use inpatient2vec::EvalReport;

use super::load_filtered;
use crate::config::{
    CONTROL_ORACLE_SALT, FAMILY_SHUFFLE_SALT, FREQ_BOOT_SALT, INTRUSION_SETS_SALT, KMEANS_SALT,
    LABEL_SHUFFLE_SALT, ORACLE_GUESS_SALT, WORKSHEET_SALT,
};
use crate::{CliError, DiagModeFlag, EmbeddingSource, EvalArgs, EvalTask};

#[derive(Serialize)]
struct Artifact<'a> {
    seed: u64,
    #[serde(flatten)]
    report: &'a EvalReport,
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let mut r = args.common.resolve()?;
    if let Some(v) = args.finetune_epochs {
        r.finetune.epochs = v;
    }
    if let Some(v) = args.finetune_lr {
        r.finetune.adam.learning_rate = v;
    }
    if let Some(v) = args.finetune_batch_size {
        r.finetune.batch_size = v;
    }
    r.finetune.validate()?;
    let tasks = args.tasks.clone().unwrap_or_else(|| {
        vec![EvalTask::Intrusion, EvalTask::Cluster, EvalTask::Recall, EvalTask::Los]
    });

    let ckpt = load_checkpoint(&args.checkpoint)?;
    let model = ckpt.to_model()?;
    let filtered = load_filtered(&args.cohort, &r.filter)?;
    ckpt.ensure_matches(&filtered)?;
    let truth: Option<GroundTruth> = match &args.truth {
        Some(path) => Some(load_ground_truth(path)?),
        None => None,
    };
    fs::create_dir_all(&args.out_dir)?;
    let seed = r.seed;
    println!("seed: {seed}");

    let mut report = EvalReport::default();
    let mut lines: Vec<String> = Vec::new();

    if tasks.contains(&EvalTask::Intrusion) {
        let embeddings = match args.embedding_source {
            EmbeddingSource::Raw => activity_embeddings(&model),
            EmbeddingSource::Contextual => {
                contextual_activity_embeddings(&model, &filtered, r.finetune.threads)?
            }
        };
        let sets =
            build_intrusion_sets(&embeddings, args.n_sets, mix_seed(seed, INTRUSION_SETS_SALT))?;
        let (sheet, key) = write_intrusion_worksheets(
            &args.out_dir,
            &sets,
            &filtered.vocabulary,
            mix_seed(seed, WORKSHEET_SALT),
        )?;
        if let Some(t) = &truth {
            let clusters = activity_cluster_ids(t, &filtered.vocabulary)?;
            let aligned = oracle_intrusion(&sets, &clusters, mix_seed(seed, ORACLE_GUESS_SALT));
            let control_labels = shuffled_labels(&clusters, mix_seed(seed, LABEL_SHUFFLE_SALT));
            let control =
                oracle_intrusion(&sets, &control_labels, mix_seed(seed, CONTROL_ORACLE_SALT));
            lines.push(format!(
                "intrusion: precision {:.4} over {} sets (shuffled-label control {:.4})",
                aligned.precision,
                sets.len(),
                control.precision
            ));
            report.intrusion = Some(IntrusionSummary {
                n_sets: sets.len(),
                precision: aligned.precision,
                control_precision: control.precision,
            });
        }
        lines.push(format!("worksheets: {} and {}", sheet.display(), key.display()));
    }

    if tasks.contains(&EvalTask::Cluster) {
        let t = truth.as_ref().ok_or_else(|| {
            CliError::usage("the cluster task needs --truth (ground-truth diagnosis families)")
        })?;
        let families = diagnosis_family_ids(t, &filtered.vocabulary)?;
        let mode = match args.diag_mode {
            DiagModeFlag::DayMean => DiagnosisVectorMode::DayMean,
            DiagModeFlag::FirstDay => DiagnosisVectorMode::FirstDay,
            DiagModeFlag::FlattenPad => DiagnosisVectorMode::FlattenPad,
        };
        let points = diagnosis_vectors(&model, mode);
        let k = args
            .k
            .unwrap_or_else(|| families.iter().collect::<BTreeSet<_>>().len());
        let clustering = kmeans(&points, k, mix_seed(seed, KMEANS_SALT), 300)?;
        let assignments: Vec<u32> = clustering.assignments.iter().map(|&a| a as u32).collect();
        let score = nmi(&assignments, &families)?;
        let control = nmi(
            &assignments,
            &shuffled_labels(&families, mix_seed(seed, FAMILY_SHUFFLE_SALT)),
        )?;
        lines.push(format!(
            "clustering: nmi {score:.4} at k={k} on {} vectors (shuffled-family control {control:.4})",
            mode.as_str()
        ));
        report.clustering = Some(ClusteringSummary {
            k,
            mode: mode.as_str().to_string(),
            nmi: score,
            control_nmi: control,
        });
    }

    let want_recall = tasks.contains(&EvalTask::Recall);
    let want_los = tasks.contains(&EvalTask::Los);
    if want_recall || want_los {
        let (train, _valid, test) = split_cohort(&filtered, &r.split)?;
        if train.visits.is_empty() || test.visits.is_empty() {
            return Err(CliError::usage(
                "split produced an empty train or test set; adjust the split ratios",
            ));
        }
        let cfg = r.finetune;
        if want_recall {
            let pre = finetune_next_day(&ckpt, &train, &test, &cfg, InitMode::Pretrained)?;
            let rnd = finetune_next_day(&ckpt, &train, &test, &cfg, InitMode::RandomInit)?;
            let freq = frequency_baseline(&train, &test, mix_seed(seed, FREQ_BOOT_SALT));
            let (pre_los, rnd_los) = if want_los {
                let a = finetune_los(&ckpt, &train, &test, &cfg, InitMode::Pretrained)?;
                let b = finetune_los(&ckpt, &train, &test, &cfg, InitMode::RandomInit)?;
                (Some(a), Some(b))
            } else {
                (None, None)
            };
            let mut rows = vec![
                MethodRow::from_reports(
                    "pretrained",
                    &pre.report,
                    pre_los.as_ref().map(|o| &o.report),
                ),
                MethodRow::from_reports(
                    "random-init",
                    &rnd.report,
                    rnd_los.as_ref().map(|o| &o.report),
                ),
                MethodRow::from_reports("baseline", &freq, None),
            ];
            // The baseline column for LOS is the constant train-mean
            // predictor, reported inside every LosReport.
            if let Some(l) = &pre_los {
                rows[2].los_rmse = Some(l.report.baseline_rmse);
            }
            report.methods = rows;
            report.next_day = Some(pre.report);
            report.los = pre_los.map(|o| o.report);
        } else {
            let pre = finetune_los(&ckpt, &train, &test, &cfg, InitMode::Pretrained)?;
            lines.push(format!(
                "remaining-LOS rmse {:.4} (constant-mean baseline {:.4})",
                pre.report.rmse, pre.report.baseline_rmse
            ));
            report.los = Some(pre.report);
        }
    }

    let mut text = String::new();
    if !report.methods.is_empty() {
        text.push_str(&inpatient2vec::eval::render_recall_table(&report.methods));
    }
    if let Some(nd) = &report.next_day {
        text.push_str(&format!(
            "next-day recall@A 95% CI: [{:.4}, {:.4}] over {} day-slots\n",
            nd.ci_recall_at_a.0, nd.ci_recall_at_a.1, nd.n_slots
        ));
    }
    for line in &lines {
        text.push_str(line);
        text.push('\n');
    }

    let report_path = args.out_dir.join("report.json");
    let mut json = serde_json::to_string_pretty(&Artifact { seed, report: &report })?;
    json.push('\n');
    fs::write(&report_path, json)?;
    let text_path = args.out_dir.join("report.txt");
    fs::write(&text_path, &text)?;
    print!("{text}");
    println!("report: {} and {}", report_path.display(), text_path.display());
    Ok(())
}
