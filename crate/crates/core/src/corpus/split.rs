//! Seeded visit-level train/validation/test partition.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Cohort, CorpusError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train: 0.75, valid: 0.1, test: 0.15, seed: 0 }
    }
}

/// Randomly partitions visits into three cohorts that all share the full
/// cohort's vocabulary (so ids stay comparable across splits). Deterministic
/// given the seed; visits keep their original relative order inside each
/// split.
pub fn split_cohort(
    cohort: &Cohort,
    config: &SplitConfig,
) -> Result<(Cohort, Cohort, Cohort), CorpusError> {
    let (r0, r1, r2) = (config.train, config.valid, config.test);
    if r0 < 0.0 || r1 < 0.0 || r2 < 0.0 || (r0 + r1 + r2 - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadRatios(r0, r1, r2));
    }
    let n = cohort.visits.len();
    if n < 3 {
        return Err(CorpusError::TooSmallToSplit { n });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    order.shuffle(&mut rng);

    let n_train = ((r0 * n as f64).round() as usize).min(n);
    let n_valid = ((r1 * n as f64).round() as usize).min(n - n_train);

    let pick = |slice: &[usize]| {
        let mut idx: Vec<usize> = slice.to_vec();
        idx.sort_unstable();
        Cohort {
            visits: idx.iter().map(|&i| cohort.visits[i].clone()).collect(),
            vocabulary: cohort.vocabulary.clone(),
            provenance: cohort.provenance.clone(),
            duplicates_merged: 0,
        }
    };
    let train = pick(&order[..n_train]);
    let valid = pick(&order[n_train..n_train + n_valid]);
    let test = pick(&order[n_train + n_valid..]);
    Ok((train, valid, test))
}
