//! Activity intrusion: build six-activity sets (five embedding
//! nearest-neighbors of an anchor plus one planted far-away intruder) and
//! score how often a cluster-aware oracle spots the intruder.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Vocabulary;

use super::geometry::{nearest_neighbors, pairwise_euclidean};
use super::EvalError;

/// One intrusion instance. The presented set is `neighbors + intruder` (six
/// distinct ids); the anchor itself is recorded but not presented.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntrusionSet {
    pub anchor: u32,
    pub neighbors: [u32; 5],
    pub intruder: u32,
}

impl IntrusionSet {
    /// The six presented ids in canonical (pre-shuffle) order.
    pub fn members(&self) -> [u32; 6] {
        let n = self.neighbors;
        [n[0], n[1], n[2], n[3], n[4], self.intruder]
    }
}

/// Builds `n_sets` intrusion sets from activity embeddings. Per set: an
/// anchor is sampled uniformly, its five nearest neighbors are taken
/// (distance ties toward the lower id), and the intruder is sampled uniformly
/// from the `ceil(|A| / 2)` activities farthest from the anchor. At least 12
/// activities are required so the two groups cannot overlap.
pub fn build_intrusion_sets(
    embeddings: &[Vec<f64>],
    n_sets: usize,
    seed: u64,
) -> Result<Vec<IntrusionSet>, EvalError> {
    let n = embeddings.len();
    if n < 12 {
        return Err(EvalError::TooFewActivities { need: 12, have: n });
    }
    let distances = pairwise_euclidean(embeddings);
    let pool = n.div_ceil(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sets = Vec::with_capacity(n_sets);
    for _ in 0..n_sets {
        let anchor = rng.random_range(0..n);
        let ordered = nearest_neighbors(&distances, anchor, n - 1);
        let mut neighbors = [0u32; 5];
        for (slot, &(id, _)) in neighbors.iter_mut().zip(&ordered) {
            *slot = id as u32;
        }
        let farthest = &ordered[ordered.len() - pool..];
        let intruder = farthest[rng.random_range(0..pool)].0 as u32;
        debug_assert!(!neighbors.contains(&intruder) && intruder != anchor as u32);
        sets.push(IntrusionSet { anchor: anchor as u32, neighbors, intruder });
    }
    Ok(sets)
}

/// Outcome of scoring intrusion sets with the cluster oracle.
#[derive(Debug, Clone)]
pub struct OracleOutcome {
    /// Fraction of sets where the oracle's pick is the planted intruder.
    pub precision: f64,
    /// The oracle's pick per set.
    pub picks: Vec<u32>,
    pub n_sets: usize,
}

/// Scores sets with an oracle that knows ground-truth cluster labels: in each
/// six-set it picks the member whose label differs from the majority label
/// (at least three) of the other five. When several members qualify the
/// oracle guesses uniformly among them, and when the labels single nobody out
/// it guesses uniformly among all six — seeded, so repeated runs agree. The
/// guesses deliberately ignore ids and geometry: the planted intruder is by
/// construction the set's geometric outlier and synthetic ids correlate with
/// clusters, so any rule keyed to either would let a shuffled-label control
/// find the intruder well above the 1-in-6 chance rate.
pub fn oracle_intrusion(sets: &[IntrusionSet], clusters: &[u32], seed: u64) -> OracleOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = Vec::with_capacity(sets.len());
    let mut hits = 0usize;
    for set in sets {
        let members = set.members();
        let mut candidates: Vec<u32> = Vec::new();
        for (i, &m) in members.iter().enumerate() {
            let mut counts: Vec<(u32, usize)> = Vec::new();
            for (j, &other) in members.iter().enumerate() {
                if i == j {
                    continue;
                }
                let label = clusters[other as usize];
                match counts.iter_mut().find(|(l, _)| *l == label) {
                    Some((_, c)) => *c += 1,
                    None => counts.push((label, 1)),
                }
            }
            let majority = counts.iter().find(|&&(_, c)| c >= 3).map(|&(l, _)| l);
            if majority.is_some_and(|l| l != clusters[m as usize]) {
                candidates.push(m);
            }
        }
        let pick = match candidates.as_slice() {
            [only] => *only,
            [] => members[rng.random_range(0..members.len())],
            several => several[rng.random_range(0..several.len())],
        };
        picks.push(pick);
        if pick == set.intruder {
            hits += 1;
        }
    }
    let n_sets = sets.len();
    let precision = if n_sets == 0 { 0.0 } else { hits as f64 / n_sets as f64 };
    OracleOutcome { precision, picks, n_sets }
}

/// A label vector with the same multiset of labels in seeded-shuffled
/// positions — the chance-level control for the oracle.
pub fn shuffled_labels(labels: &[u32], seed: u64) -> Vec<u32> {
    let mut out = labels.to_vec();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}

/// Writes `worksheet.csv` (sets with members in seeded-shuffled presentation
/// order) and `worksheet_key.csv` (the answers) into `dir`, returning both
/// paths. Keeping the key out of the worksheet lets the sheet be handed to a
/// human rater unspoiled.
pub fn write_intrusion_worksheets(
    dir: &Path,
    sets: &[IntrusionSet],
    vocab: &Vocabulary,
    seed: u64,
) -> Result<(PathBuf, PathBuf), EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sheet_path = dir.join("worksheet.csv");
    let key_path = dir.join("worksheet_key.csv");
    let mut sheet = std::io::BufWriter::new(std::fs::File::create(&sheet_path)?);
    let mut key = std::io::BufWriter::new(std::fs::File::create(&key_path)?);
    writeln!(sheet, "set,member_1,member_2,member_3,member_4,member_5,member_6")?;
    writeln!(key, "set,anchor,intruder")?;
    for (i, set) in sets.iter().enumerate() {
        let mut members = set.members();
        members.shuffle(&mut rng);
        let codes: Vec<&str> = members.iter().map(|&m| vocab.activity_code(m)).collect();
        writeln!(sheet, "{},{}", i, codes.join(","))?;
        writeln!(
            key,
            "{},{},{}",
            i,
            vocab.activity_code(set.anchor),
            vocab.activity_code(set.intruder)
        )?;
    }
    sheet.flush()?;
    key.flush()?;
    Ok((sheet_path, key_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticSpec};

    /// Clustered toy embeddings: `per_cluster` points near each corner of a
    /// widely separated simplex, jittered deterministically.
    fn clustered_embeddings(n_clusters: usize, per_cluster: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for c in 0..n_clusters {
            for _ in 0..per_cluster {
                let mut p = vec![0.0; n_clusters];
                p[c] = 10.0;
                for x in &mut p {
                    *x += rng.random_range(-0.5..0.5);
                }
                points.push(p);
                labels.push(c as u32);
            }
        }
        (points, labels)
    }

    #[test]
    fn neighbors_match_brute_force_with_tie_break() {
        // 1-D embeddings placed so the anchor at 0.0 has an exact distance tie
        // between ids 1 and 2.
        let embeddings: Vec<Vec<f64>> = [0.0, 1.0, -1.0, 2.0, -2.5, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]
            .iter()
            .map(|&x| vec![x])
            .collect();
        let sets = build_intrusion_sets(&embeddings, 30, 0).unwrap();
        for set in &sets {
            if set.anchor == 0 {
                assert_eq!(set.neighbors, [1, 2, 3, 4, 5]);
            }
            // Intruder always lies in the farthest half.
            let d = pairwise_euclidean(&embeddings);
            let mut others: Vec<(usize, f64)> = d[set.anchor as usize]
                .iter()
                .copied()
                .enumerate()
                .filter(|&(j, _)| j != set.anchor as usize)
                .collect();
            others.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let pool: Vec<u32> =
                others[others.len() - embeddings.len().div_ceil(2)..].iter().map(|&(i, _)| i as u32).collect();
            assert!(pool.contains(&set.intruder));
            let members = set.members();
            let mut unique = members.to_vec();
            unique.sort_unstable();
            unique.dedup();
            assert_eq!(unique.len(), 6, "members must be distinct");
            assert!(!members.contains(&set.anchor));
        }
    }

    #[test]
    fn too_few_activities_is_an_error() {
        let embeddings: Vec<Vec<f64>> = (0..11).map(|i| vec![i as f64]).collect();
        assert!(matches!(
            build_intrusion_sets(&embeddings, 5, 0),
            Err(EvalError::TooFewActivities { need: 12, have: 11 })
        ));
    }

    #[test]
    fn same_seed_rebuilds_identical_sets() {
        let (points, _) = clustered_embeddings(4, 5, 3);
        let a = build_intrusion_sets(&points, 40, 9).unwrap();
        let b = build_intrusion_sets(&points, 40, 9).unwrap();
        assert_eq!(a, b);
        let c = build_intrusion_sets(&points, 40, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn unique_candidate_is_picked_directly() {
        let (_, labels) = clustered_embeddings(2, 10, 1);
        // Five members of cluster 0, intruder from cluster 1. No guess is
        // involved, so the pick is seed-independent.
        for seed in [0, 1, 99] {
            let set = IntrusionSet { anchor: 0, neighbors: [1, 2, 3, 4, 5], intruder: 12 };
            let outcome = oracle_intrusion(&[set], &labels, seed);
            assert_eq!(outcome.picks, vec![12]);
            assert_eq!(outcome.precision, 1.0);
        }
    }

    #[test]
    fn candidate_ties_resolve_by_seeded_uniform_guess() {
        // Labels [0,0,0,0,1,2]: members 4 and 5 each disagree with a 4-strong
        // majority among the other five, so both are candidates and the
        // oracle must guess between them.
        let labels = vec![0, 0, 0, 0, 1, 2];
        let set = IntrusionSet { anchor: 9, neighbors: [0, 1, 2, 3, 4], intruder: 5 };
        let mut count_4 = 0;
        for seed in 0..200 {
            let outcome = oracle_intrusion(&[set.clone()], &labels, seed);
            let pick = outcome.picks[0];
            assert!(pick == 4 || pick == 5, "pick {pick} is not a candidate");
            assert_eq!(outcome.precision, if pick == 5 { 1.0 } else { 0.0 });
            // Same seed, same guess.
            assert_eq!(oracle_intrusion(&[set.clone()], &labels, seed).picks, outcome.picks);
            count_4 += usize::from(pick == 4);
        }
        // Both candidates come up about half the time (expected 100 of 200).
        assert!((60..=140).contains(&count_4), "pick 4 came up {count_4} of 200 times");
    }

    #[test]
    fn no_majority_forces_a_uniform_guess_over_all_six() {
        // Labels [0,0,1,1,2,2]: no member sees a >= 3 majority among the other
        // five, so the oracle guesses among all six members.
        let labels = vec![0, 0, 1, 1, 2, 2];
        let set = IntrusionSet { anchor: 9, neighbors: [0, 1, 2, 3, 4], intruder: 5 };
        let mut counts = [0usize; 6];
        for seed in 0..300 {
            let pick = oracle_intrusion(&[set.clone()], &labels, seed).picks[0];
            counts[pick as usize] += 1;
        }
        // Every member shows up near the uniform rate (expected 50 of 300).
        for (member, &c) in counts.iter().enumerate() {
            assert!((25..=80).contains(&c), "member {member} picked {c} of 300 times");
        }
    }

    #[test]
    fn cluster_aligned_geometry_scores_high_and_shuffled_control_low() {
        let (points, labels) = clustered_embeddings(4, 10, 7);
        let sets = build_intrusion_sets(&points, 300, 11).unwrap();
        let aligned = oracle_intrusion(&sets, &labels, 17);
        assert!(aligned.precision >= 0.9, "aligned precision {}", aligned.precision);
        let control = oracle_intrusion(&sets, &shuffled_labels(&labels, 13), 19);
        assert!(control.precision <= 0.3, "control precision {}", control.precision);
    }

    #[test]
    fn random_embeddings_match_shuffled_control_at_alpha_01() {
        // With structureless embeddings the true-label oracle is no better
        // than the shuffled-label control: two-proportion z-test at α = 0.01.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let points: Vec<Vec<f64>> =
            (0..40).map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<u32> = (0..40).map(|i| i % 4).collect();
        let sets = build_intrusion_sets(&points, 500, 21).unwrap();
        let p1 = oracle_intrusion(&sets, &labels, 31).precision;
        let p2 = oracle_intrusion(&sets, &shuffled_labels(&labels, 22), 32).precision;
        let n = 500.0;
        let pooled = (p1 + p2) / 2.0;
        let se = (pooled * (1.0 - pooled) * (2.0 / n)).sqrt();
        let z = if se == 0.0 { 0.0 } else { (p1 - p2) / se };
        assert!(z.abs() < 2.576, "|z| = {} (p1 = {p1}, p2 = {p2})", z.abs());
    }

    #[test]
    fn worksheets_separate_sets_from_answers() {
        let (cohort, _) = generate_synthetic(&SyntheticSpec::with_counts(60, 15, 3, 4, 2, 5)).unwrap();
        let n = cohort.vocabulary.n_activities();
        assert!(n >= 12, "fixed-seed cohort observes {n} of 15 activities");
        let embeddings: Vec<Vec<f64>> =
            (0..n).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
        let sets = build_intrusion_sets(&embeddings, 8, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (sheet_path, key_path) =
            write_intrusion_worksheets(dir.path(), &sets, &cohort.vocabulary, 4).unwrap();
        let sheet = std::fs::read_to_string(&sheet_path).unwrap();
        let key = std::fs::read_to_string(&key_path).unwrap();
        assert_eq!(sheet.lines().count(), 9);
        assert_eq!(key.lines().count(), 9);
        for (sheet_line, (key_line, set)) in
            sheet.lines().skip(1).zip(key.lines().skip(1).zip(&sets))
        {
            let members: Vec<&str> = sheet_line.split(',').skip(1).collect();
            assert_eq!(members.len(), 6);
            let key_fields: Vec<&str> = key_line.split(',').collect();
            // The intruder named in the key appears among the presented six.
            assert!(members.contains(&key_fields[2]));
            assert_eq!(key_fields[2], cohort.vocabulary.activity_code(set.intruder));
            // The worksheet itself never names the intruder column.
            assert!(!sheet.contains("intruder"));
        }
    }
}
