//! `i2v synth`: sample a synthetic cohort and its ground-truth structure.

use std::fs;

use inpatient2vec::corpus::{generate_synthetic, save_cohort, save_ground_truth, SyntheticSpec};

use crate::{CliError, SynthArgs};

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::usage(format!("cannot read spec {}: {e}", path.display()))
            })?;
            serde_json::from_str::<SyntheticSpec>(&text)
                .map_err(|e| CliError::usage(format!("spec {}: {e}", path.display())))?
        }
        None => {
            let counts = [
                ("--visits", args.visits),
                ("--activities", args.activities),
                ("--clusters", args.clusters),
                ("--diagnoses", args.diagnoses),
                ("--families", args.families),
            ];
            if let Some((flag, _)) = counts.iter().find(|(_, v)| *v == 0) {
                return Err(CliError::usage(format!("{flag} must be positive")));
            }
            SyntheticSpec::with_counts(
                args.visits,
                args.activities,
                args.clusters,
                args.diagnoses,
                args.families,
                args.seed.unwrap_or(0),
            )
        }
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }

    let (cohort, truth) = generate_synthetic(&spec)?;
    fs::create_dir_all(&args.out_dir)?;
    let cohort_path = args.out_dir.join("cohort.jsonl");
    let truth_path = args.out_dir.join("ground_truth.json");
    save_cohort(&cohort, &cohort_path)?;
    save_ground_truth(&truth, &truth_path)?;

    println!("seed: {}", spec.seed);
    println!(
        "visits: {}  activities: {}  diagnoses: {}",
        cohort.visits.len(),
        cohort.vocabulary.n_activities(),
        cohort.vocabulary.n_diagnoses()
    );
    println!("cohort: {}", cohort_path.display());
    println!("ground truth: {}", truth_path.display());
    Ok(())
}
