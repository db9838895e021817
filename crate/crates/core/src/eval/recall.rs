//! Recall metrics for next-day activity prediction, the frequency baseline,
//! and percentile-bootstrap confidence intervals.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Cohort;

/// Activity ids ordered by descending score, score ties toward the lower id.
pub fn rank_activities(scores: &[f64]) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..scores.len() as u32).collect();
    ids.sort_by(|&a, &b| {
        scores[b as usize].total_cmp(&scores[a as usize]).then(a.cmp(&b))
    });
    ids
}

/// Recall with an adaptive denominator: `|top-k ∩ truth| / min(k, |truth|)`.
/// With `k = |truth|` this is the adaptive "recall at A" variant.
pub fn recall_at_k(ranking: &[u32], truth: &BTreeSet<u32>, k: usize) -> f64 {
    assert!(k >= 1, "k must be positive");
    assert!(!truth.is_empty(), "truth set must be non-empty");
    let hits = top_k_hits(ranking, truth, k);
    hits as f64 / k.min(truth.len()) as f64
}

/// Conventional recall: `|top-k ∩ truth| / |truth|`.
pub fn standard_recall_at_k(ranking: &[u32], truth: &BTreeSet<u32>, k: usize) -> f64 {
    assert!(k >= 1, "k must be positive");
    assert!(!truth.is_empty(), "truth set must be non-empty");
    top_k_hits(ranking, truth, k) as f64 / truth.len() as f64
}

fn top_k_hits(ranking: &[u32], truth: &BTreeSet<u32>, k: usize) -> usize {
    ranking.iter().take(k).filter(|id| truth.contains(id)).count()
}

/// Micro-averaged recall over every (visit, target-day) slot, with a
/// percentile-bootstrap confidence interval on the adaptive variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub n_slots: usize,
    /// Adaptive recall, `k = |truth|`.
    pub recall_at_a: f64,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub recall_at_20: f64,
    /// Conventional recall (denominator always `|truth|`).
    pub standard_recall_at_5: f64,
    pub standard_recall_at_10: f64,
    pub standard_recall_at_20: f64,
    /// 95% percentile-bootstrap interval for `recall_at_a`.
    pub ci_recall_at_a: (f64, f64),
    /// Raw per-slot adaptive recall, in slot order.
    pub per_slot_at_a: Vec<f64>,
}

/// Per-slot metric values prior to aggregation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SlotRecall {
    pub at_a: f64,
    pub at_5: f64,
    pub at_10: f64,
    pub at_20: f64,
    pub std_5: f64,
    pub std_10: f64,
    pub std_20: f64,
}

impl SlotRecall {
    pub(crate) fn score(ranking: &[u32], truth: &BTreeSet<u32>) -> SlotRecall {
        SlotRecall {
            at_a: recall_at_k(ranking, truth, truth.len()),
            at_5: recall_at_k(ranking, truth, 5),
            at_10: recall_at_k(ranking, truth, 10),
            at_20: recall_at_k(ranking, truth, 20),
            std_5: standard_recall_at_k(ranking, truth, 5),
            std_10: standard_recall_at_k(ranking, truth, 10),
            std_20: standard_recall_at_k(ranking, truth, 20),
        }
    }
}

impl RecallReport {
    /// Micro mean over slots; `bootstrap_seed` drives the CI resampling.
    pub(crate) fn from_slots(slots: &[SlotRecall], bootstrap_seed: u64) -> RecallReport {
        assert!(!slots.is_empty(), "recall needs at least one evaluation slot");
        let n = slots.len() as f64;
        let mean = |f: fn(&SlotRecall) -> f64| slots.iter().map(f).sum::<f64>() / n;
        let per_slot_at_a: Vec<f64> = slots.iter().map(|s| s.at_a).collect();
        RecallReport {
            n_slots: slots.len(),
            recall_at_a: mean(|s| s.at_a),
            recall_at_5: mean(|s| s.at_5),
            recall_at_10: mean(|s| s.at_10),
            recall_at_20: mean(|s| s.at_20),
            standard_recall_at_5: mean(|s| s.std_5),
            standard_recall_at_10: mean(|s| s.std_10),
            standard_recall_at_20: mean(|s| s.std_20),
            ci_recall_at_a: bootstrap_ci(&per_slot_at_a, 1000, bootstrap_seed),
            per_slot_at_a,
        }
    }
}

/// 95% percentile bootstrap over the mean of `values`: `b` resamples with
/// replacement, interval at the 2.5th and 97.5th percentiles.
pub fn bootstrap_ci(values: &[f64], b: usize, seed: u64) -> (f64, f64) {
    assert!(!values.is_empty(), "bootstrap needs data");
    assert!(b >= 2, "bootstrap needs at least two resamples");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut means = Vec::with_capacity(b);
    for _ in 0..b {
        let sum: f64 = (0..n).map(|_| values[rng.random_range(0..n)]).sum();
        means.push(sum / n as f64);
    }
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[(q * (b - 1) as f64).round() as usize];
    (at(0.025), at(0.975))
}

/// Evaluation slots: every `(visit index, 0-based target day index)` pair
/// with a preceding day to predict from (targets are days 2..=LOS).
pub fn next_day_slots(cohort: &Cohort) -> Vec<(usize, usize)> {
    let mut slots = Vec::new();
    for (v, visit) in cohort.visits.iter().enumerate() {
        for t in 1..visit.los() {
            slots.push((v, t));
        }
    }
    slots
}

/// Activity ids ordered by descending frequency in `train` (ties toward the
/// lower id), covering the whole vocabulary.
pub fn frequency_ranking(train: &Cohort) -> Vec<u32> {
    let mut counts = vec![0usize; train.vocabulary.n_activities()];
    for visit in &train.visits {
        for day in &visit.days {
            for &a in day {
                counts[a as usize] += 1;
            }
        }
    }
    let mut ids: Vec<u32> = (0..counts.len() as u32).collect();
    ids.sort_by(|&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b)));
    ids
}

/// The non-learned baseline: the same train-frequency ranking predicted for
/// every slot of `test`.
pub fn frequency_baseline(train: &Cohort, test: &Cohort, bootstrap_seed: u64) -> RecallReport {
    let ranking = frequency_ranking(train);
    let slots: Vec<SlotRecall> = next_day_slots(test)
        .into_iter()
        .map(|(v, t)| {
            let truth: BTreeSet<u32> = test.visits[v].days[t].iter().copied().collect();
            SlotRecall::score(&ranking, &truth)
        })
        .collect();
    RecallReport::from_slots(&slots, bootstrap_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Cohort, Visit, Vocabulary};

    fn truth(ids: &[u32]) -> BTreeSet<u32> {
        ids.iter().copied().collect()
    }

    #[test]
    fn adaptive_denominator_follows_the_definition() {
        // Truth has 3 activities, the top 5 contain 2 of them:
        // 2 / min(5, 3) = 2/3.
        let ranking = vec![9, 1, 8, 2, 7, 3, 6, 5, 4, 0];
        let t = truth(&[1, 2, 3]);
        assert!((recall_at_k(&ranking, &t, 5) - 2.0 / 3.0).abs() < 1e-15);
        // Standard recall uses the full truth size: same value here.
        assert!((standard_recall_at_k(&ranking, &t, 5) - 2.0 / 3.0).abs() < 1e-15);
        // k = 2 < |truth|: adaptive divides by 2, standard still by 3.
        assert!((recall_at_k(&ranking, &t, 2) - 0.5).abs() < 1e-15);
        assert!((standard_recall_at_k(&ranking, &t, 2) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn recall_at_a_is_one_exactly_when_the_top_slice_is_the_truth() {
        let ranking = vec![4, 2, 7, 0, 1, 3, 5, 6];
        let t = truth(&[2, 4, 7]);
        assert_eq!(recall_at_k(&ranking, &t, t.len()), 1.0);
        let miss = truth(&[2, 4, 6]);
        assert!((recall_at_k(&ranking, &miss, miss.len()) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ranking_breaks_score_ties_toward_lower_ids() {
        let ranking = rank_activities(&[0.5, 0.9, 0.5, 0.1]);
        assert_eq!(ranking, vec![1, 0, 2, 3]);
    }

    #[test]
    fn cutoffs_are_monotone_on_small_truth_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let scores: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ranking = rank_activities(&scores);
            let size = rng.random_range(1..=5);
            let mut t = BTreeSet::new();
            while t.len() < size {
                t.insert(rng.random_range(0..30u32));
            }
            let r5 = recall_at_k(&ranking, &t, 5);
            let r10 = recall_at_k(&ranking, &t, 10);
            let r20 = recall_at_k(&ranking, &t, 20);
            assert!(r5 <= r10 + 1e-15 && r10 <= r20 + 1e-15);
            // The conventional variant never exceeds the adaptive one.
            for k in [5, 10, 20] {
                assert!(
                    standard_recall_at_k(&ranking, &t, k) <= recall_at_k(&ranking, &t, k) + 1e-15
                );
            }
        }
    }

    /// Two tiny cohorts over a shared 4-activity vocabulary with
    /// hand-countable frequencies.
    fn hand_cohorts() -> (Cohort, Cohort) {
        let cv = |id: &str, days: &[&[&str]]| crate::corpus::CodeVisit {
            visit_id: id.into(),
            diagnosis: "D0".into(),
            days: days.iter().map(|d| d.iter().map(|c| c.to_string()).collect()).collect(),
        };
        // Train counts: a0 ×4, a1 ×3, a2 ×1, a3 ×2 → ranking [a0, a1, a3, a2].
        let union = Cohort::from_code_visits(
            vec![
                cv("t0", &[&["a0", "a1"], &["a0", "a3"]]),
                cv("t1", &[&["a0", "a1", "a2"], &["a0", "a1", "a3"]]),
                cv("e0", &[&["a0"], &["a1", "a2"], &["a2", "a3"]]),
            ],
            "hand".into(),
        )
        .unwrap();
        let train = Cohort {
            visits: union.visits[..2].to_vec(),
            vocabulary: union.vocabulary.clone(),
            provenance: "hand-train".into(),
            duplicates_merged: 0,
        };
        let test = Cohort {
            visits: union.visits[2..].to_vec(),
            vocabulary: union.vocabulary,
            provenance: "hand-test".into(),
            duplicates_merged: 0,
        };
        (train, test)
    }

    #[test]
    fn frequency_ranking_counts_mentions_with_id_tie_break() {
        let (train, _) = hand_cohorts();
        // a0 appears 4 times, a1 3, a3 2, a2 1.
        assert_eq!(frequency_ranking(&train), vec![0, 1, 3, 2]);
    }

    #[test]
    fn frequency_baseline_matches_hand_computation() {
        let (train, test) = hand_cohorts();
        let report = frequency_baseline(&train, &test, 0);
        // Slots: day 2 truth {a1, a2}, day 3 truth {a2, a3}.
        // Ranking [a0, a1, a3, a2]; top-2 = {a0, a1}.
        // Slot 1: |{a1}| / 2 = 0.5; slot 2: |{}| / 2 = 0.
        assert_eq!(report.n_slots, 2);
        assert!((report.recall_at_a - 0.25).abs() < 1e-15);
        // Top 5 covers the whole 4-code vocabulary: every recall becomes 1.
        assert_eq!(report.recall_at_5, 1.0);
        assert_eq!(report.recall_at_10, 1.0);
        assert_eq!(report.standard_recall_at_10, 1.0);
        assert_eq!(report.per_slot_at_a, vec![0.5, 0.0]);
    }

    #[test]
    fn next_day_slots_enumerate_second_and_later_days() {
        let (_, test) = hand_cohorts();
        assert_eq!(next_day_slots(&test), vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn bootstrap_interval_is_degenerate_for_constant_data() {
        let values = vec![0.75; 40];
        assert_eq!(bootstrap_ci(&values, 500, 7), (0.75, 0.75));
    }

    #[test]
    fn bootstrap_interval_brackets_the_mean_and_shrinks_with_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let small: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
        let large: Vec<f64> = (0..5000).map(|_| rng.random_range(0.0..1.0)).collect();
        for values in [&small, &large] {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let (lo, hi) = bootstrap_ci(values, 1000, 3);
            assert!(lo <= mean && mean <= hi, "({lo}, {hi}) should bracket {mean}");
            assert!(lo < hi);
        }
        let w_small = {
            let (lo, hi) = bootstrap_ci(&small, 1000, 3);
            hi - lo
        };
        let w_large = {
            let (lo, hi) = bootstrap_ci(&large, 1000, 3);
            hi - lo
        };
        assert!(w_large < w_small / 3.0, "widths {w_small} vs {w_large}");
    }

    #[test]
    fn bootstrap_is_deterministic_per_seed() {
        let values: Vec<f64> = (0..100).map(|i| (i % 7) as f64).collect();
        assert_eq!(bootstrap_ci(&values, 1000, 5), bootstrap_ci(&values, 1000, 5));
        assert_ne!(bootstrap_ci(&values, 1000, 5), bootstrap_ci(&values, 1000, 6));
    }

    #[test]
    fn report_aggregation_is_the_micro_mean() {
        let slots = vec![
            SlotRecall { at_a: 1.0, at_5: 1.0, at_10: 1.0, at_20: 1.0, std_5: 1.0, std_10: 1.0, std_20: 1.0 },
            SlotRecall { at_a: 0.0, at_5: 0.5, at_10: 0.5, at_20: 1.0, std_5: 0.25, std_10: 0.5, std_20: 1.0 },
        ];
        let report = RecallReport::from_slots(&slots, 1);
        assert_eq!(report.recall_at_a, 0.5);
        assert_eq!(report.recall_at_5, 0.75);
        assert_eq!(report.standard_recall_at_5, 0.625);
        assert_eq!(report.n_slots, 2);
        let (lo, hi) = report.ci_recall_at_a;
        assert!((0.0..=0.5).contains(&lo) && (0.5..=1.0).contains(&hi));
    }

    #[test]
    #[should_panic(expected = "truth set must be non-empty")]
    fn empty_truth_panics() {
        recall_at_k(&[0, 1, 2], &BTreeSet::new(), 5);
    }

    // Vocabulary is sorted by code, so the helper cohort's ids are stable.
    #[test]
    fn hand_cohort_ids_are_as_documented() {
        let (train, test) = hand_cohorts();
        assert_eq!(train.vocabulary.activity_codes(), &["a0", "a1", "a2", "a3"]);
        assert_eq!(train.vocabulary.digest(), test.vocabulary.digest());
        let _unused: &Vocabulary = &train.vocabulary;
        let _v: &Visit = &test.visits[0];
    }
}
