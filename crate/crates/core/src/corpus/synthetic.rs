//! Synthetic inpatient cohorts with known ground-truth structure.
//!
//! Activities are grouped into co-occurrence clusters and diagnoses into
//! families; each family owns a pair of clusters. A visit's days move through
//! three phases (early / middle / late), and the phase shifts the sampling
//! mixture from the family's first cluster to its second. Day index therefore
//! carries real signal, diagnosis families are recoverable from activity
//! patterns, and both facts are recorded in a [`GroundTruth`] sidecar so
//! evaluations can score embeddings without human judges.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{CodeVisit, Cohort, CorpusError, MAX_LOS};

/// Mass concentrated on the family's cluster pair (the rest is spread
/// uniformly across all clusters as background noise).
const DOMINANT_MASS: f64 = 0.95;
/// Share of the dominant mass on the family's first cluster per phase.
const PHASE_SHARE: [f64; 3] = [1.0, 0.5, 0.0];
/// Mean extra activities per day on top of the minimum.
const ACTS_PER_DAY_LAMBDA: f64 = 4.0;
const ACTS_PER_DAY_MIN: usize = 2;
/// Hard cap on activities per day; keeps the Poisson tail bounded.
const ACTS_PER_DAY_CAP: usize = 30;

/// Fully materialized sampling plan for a synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_visits: usize,
    pub n_activities: usize,
    pub n_clusters: usize,
    pub n_diagnoses: usize,
    pub n_families: usize,
    /// Poisson mean of (LOS − 2) per diagnosis.
    pub los_lambda: Vec<f64>,
    /// `[diagnosis][phase][cluster]` sampling weights; each row sums to 1.
    pub phase_cluster_weights: Vec<Vec<Vec<f64>>>,
    /// Ground-truth cluster per activity id (id = index).
    pub activity_cluster: Vec<usize>,
    /// Ground-truth family per diagnosis id (id = index).
    pub diagnosis_family: Vec<usize>,
    /// Poisson mean of (activities per day − minimum).
    pub acts_per_day_lambda: f64,
    pub acts_per_day_min: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Structured spec from headline counts. Activities are assigned to
    /// clusters round-robin and diagnoses to families round-robin; family `f`
    /// owns clusters `2f` and `2f+1` (mod the cluster count). LOS means vary
    /// by family and by diagnosis so different diagnoses have visibly
    /// different stay lengths.
    pub fn with_counts(
        n_visits: usize,
        n_activities: usize,
        n_clusters: usize,
        n_diagnoses: usize,
        n_families: usize,
        seed: u64,
    ) -> Self {
        let activity_cluster: Vec<usize> = (0..n_activities).map(|a| a % n_clusters).collect();
        let diagnosis_family: Vec<usize> = (0..n_diagnoses).map(|d| d % n_families).collect();
        let los_lambda: Vec<f64> = (0..n_diagnoses)
            .map(|d| 3.0 + 0.5 * (d % n_families) as f64 + 0.3 * (d % 4) as f64)
            .collect();
        let phase_cluster_weights = (0..n_diagnoses)
            .map(|d| {
                let f = diagnosis_family[d];
                let (c1, c2) = ((2 * f) % n_clusters, (2 * f + 1) % n_clusters);
                PHASE_SHARE
                    .iter()
                    .map(|&share| {
                        let mut w = vec![(1.0 - DOMINANT_MASS) / n_clusters as f64; n_clusters];
                        w[c1] += DOMINANT_MASS * share;
                        w[c2] += DOMINANT_MASS * (1.0 - share);
                        w
                    })
                    .collect()
            })
            .collect();
        SyntheticSpec {
            n_visits,
            n_activities,
            n_clusters,
            n_diagnoses,
            n_families,
            los_lambda,
            phase_cluster_weights,
            activity_cluster,
            diagnosis_family,
            acts_per_day_lambda: ACTS_PER_DAY_LAMBDA,
            acts_per_day_min: ACTS_PER_DAY_MIN,
            seed,
        }
    }

    /// The shipped default: 2,000 visits, 200 activities in 10 clusters,
    /// 20 diagnoses in 5 families.
    pub fn default_spec(seed: u64) -> Self {
        Self::with_counts(2000, 200, 10, 20, 5, seed)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let err = |m: String| Err(CorpusError::InvalidSpec(m));
        if self.n_visits == 0 || self.n_activities == 0 || self.n_diagnoses == 0 {
            return err("counts must be positive".into());
        }
        if self.n_clusters == 0 || self.n_families == 0 {
            return err("cluster and family counts must be positive".into());
        }
        if self.activity_cluster.len() != self.n_activities {
            return err("activity_cluster length mismatch".into());
        }
        if self.diagnosis_family.len() != self.n_diagnoses {
            return err("diagnosis_family length mismatch".into());
        }
        if self.los_lambda.len() != self.n_diagnoses {
            return err("los_lambda length mismatch".into());
        }
        if self.phase_cluster_weights.len() != self.n_diagnoses {
            return err("phase_cluster_weights length mismatch".into());
        }
        if let Some(c) = self.activity_cluster.iter().find(|&&c| c >= self.n_clusters) {
            return err(format!("activity cluster {c} out of range"));
        }
        if let Some(f) = self.diagnosis_family.iter().find(|&&f| f >= self.n_families) {
            return err(format!("diagnosis family {f} out of range"));
        }
        for c in 0..self.n_clusters {
            if !self.activity_cluster.contains(&c) {
                return err(format!("cluster {c} has no member activities"));
            }
        }
        if self.los_lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return err("los_lambda entries must be positive".into());
        }
        if !(self.acts_per_day_lambda > 0.0) {
            return err("acts_per_day_lambda must be positive".into());
        }
        for (d, phases) in self.phase_cluster_weights.iter().enumerate() {
            if phases.len() != PHASE_SHARE.len() {
                return err(format!("diagnosis {d}: expected {} phases", PHASE_SHARE.len()));
            }
            for (p, w) in phases.iter().enumerate() {
                if w.len() != self.n_clusters {
                    return err(format!("diagnosis {d} phase {p}: weight length mismatch"));
                }
                let sum: f64 = w.iter().sum();
                if w.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-9 {
                    return err(format!("diagnosis {d} phase {p}: weights not a distribution"));
                }
            }
        }
        Ok(())
    }

    pub fn activity_code(a: usize) -> String {
        format!("A{a:03}")
    }

    pub fn diagnosis_code(d: usize) -> String {
        format!("D{d:02}")
    }
}

/// Oracle mapping used by evaluations in place of human judgment: which
/// cluster each activity was sampled from and which family each diagnosis
/// belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub activity_clusters: BTreeMap<String, u32>,
    pub diagnosis_families: BTreeMap<String, u32>,
}

impl GroundTruth {
    pub fn cluster_of(&self, code: &str) -> Option<u32> {
        self.activity_clusters.get(code).copied()
    }

    pub fn family_of(&self, code: &str) -> Option<u32> {
        self.diagnosis_families.get(code).copied()
    }

    pub fn n_clusters(&self) -> usize {
        self.activity_clusters.values().map(|&c| c as usize + 1).max().unwrap_or(0)
    }

    pub fn n_families(&self) -> usize {
        self.diagnosis_families.values().map(|&f| f as usize + 1).max().unwrap_or(0)
    }
}

/// Which of the three phases a 1-based day index falls into for a given LOS.
pub fn day_phase(day: usize, los: usize) -> usize {
    (3 * (day - 1) / los).min(2)
}

/// Samples a full cohort per the spec. Deterministic given `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Cohort, GroundTruth), CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut cluster_members: Vec<Vec<usize>> = vec![Vec::new(); spec.n_clusters];
    for (a, &c) in spec.activity_cluster.iter().enumerate() {
        cluster_members[c].push(a);
    }
    let acts_poisson = Poisson::new(spec.acts_per_day_lambda)
        .map_err(|e| CorpusError::InvalidSpec(e.to_string()))?;
    let los_poisson: Vec<Poisson<f64>> = spec
        .los_lambda
        .iter()
        .map(|&l| Poisson::new(l).map_err(|e| CorpusError::InvalidSpec(e.to_string())))
        .collect::<Result<_, _>>()?;

    let day_cap = spec.n_activities.min(ACTS_PER_DAY_CAP.max(spec.acts_per_day_min));
    let mut raw = Vec::with_capacity(spec.n_visits);
    for i in 0..spec.n_visits {
        let d = rng.random_range(0..spec.n_diagnoses);
        let extra = los_poisson[d].sample(&mut rng) as usize;
        let los = (2 + extra).min(MAX_LOS);
        let mut days = Vec::with_capacity(los);
        for t in 1..=los {
            let phase = day_phase(t, los);
            let weights = &spec.phase_cluster_weights[d][phase];
            let m = (spec.acts_per_day_min + acts_poisson.sample(&mut rng) as usize).min(day_cap);
            let mut day: BTreeSet<usize> = BTreeSet::new();
            let mut attempts = 0;
            while day.len() < m && attempts < 200 * m {
                attempts += 1;
                let cluster = sample_index(weights, &mut rng);
                let members = &cluster_members[cluster];
                let a = members[rng.random_range(0..members.len())];
                day.insert(a);
            }
            days.push(day.into_iter().map(SyntheticSpec::activity_code).collect());
        }
        raw.push(CodeVisit {
            visit_id: format!("v{i:06}"),
            diagnosis: SyntheticSpec::diagnosis_code(d),
            days,
        });
    }

    let truth = GroundTruth {
        activity_clusters: (0..spec.n_activities)
            .map(|a| (SyntheticSpec::activity_code(a), spec.activity_cluster[a] as u32))
            .collect(),
        diagnosis_families: (0..spec.n_diagnoses)
            .map(|d| (SyntheticSpec::diagnosis_code(d), spec.diagnosis_family[d] as u32))
            .collect(),
    };
    let cohort = Cohort::from_code_visits(raw, format!("synthetic:seed={}", spec.seed))?;
    Ok((cohort, truth))
}

/// Draws an index proportional to `weights` (assumed normalized).
fn sample_index<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::cohort_stats;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    /// Two-sided 3σ on the normal scale expressed as a chi-square quantile.
    fn chi2_threshold(df: f64) -> f64 {
        ChiSquared::new(df).unwrap().inverse_cdf(0.997_300_203_936_740_2)
    }

    #[test]
    fn same_seed_is_deterministic() {
        let spec = SyntheticSpec::with_counts(50, 40, 4, 6, 2, 123);
        let (a, ta) = generate_synthetic(&spec).unwrap();
        let (b, tb) = generate_synthetic(&spec).unwrap();
        assert!(a.structurally_eq(&b));
        assert_eq!(ta, tb);
        let other = SyntheticSpec { seed: 124, ..spec };
        let (c, _) = generate_synthetic(&other).unwrap();
        assert!(!a.structurally_eq(&c));
    }

    #[test]
    fn default_spec_counts() {
        let spec = SyntheticSpec::default_spec(7);
        assert_eq!(spec.n_visits, 2000);
        assert_eq!(spec.n_activities, 200);
        assert_eq!(spec.n_clusters, 10);
        assert_eq!(spec.n_diagnoses, 20);
        assert_eq!(spec.n_families, 5);
        spec.validate().unwrap();
    }

    #[test]
    fn ground_truth_maps_are_total() {
        let spec = SyntheticSpec::default_spec(3);
        let (cohort, truth) = generate_synthetic(&spec).unwrap();
        for code in cohort.vocabulary.activity_codes() {
            assert!(truth.cluster_of(code).is_some(), "no cluster for {code}");
        }
        for code in cohort.vocabulary.diagnosis_codes() {
            assert!(truth.family_of(code).is_some(), "no family for {code}");
        }
        assert_eq!(truth.n_clusters(), 10);
        assert_eq!(truth.n_families(), 5);
    }

    #[test]
    fn single_cluster_day_sets_are_uniform_subsets() {
        // One diagnosis, one cluster: every day is a uniformly random subset,
        // so appearance counts are symmetric across activities. Checked with
        // a chi-square statistic against the uniform expectation at the
        // 3σ-equivalent quantile.
        let spec = SyntheticSpec::with_counts(2000, 50, 1, 1, 1, 42);
        let (cohort, _) = generate_synthetic(&spec).unwrap();
        let mut counts = vec![0usize; 50];
        for v in &cohort.visits {
            for day in &v.days {
                for &a in day {
                    counts[a as usize] += 1;
                }
            }
        }
        let total: usize = counts.iter().sum();
        let expected = total as f64 / 50.0;
        let chi2: f64 =
            counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let threshold = chi2_threshold(49.0);
        assert!(chi2 < threshold, "chi2 {chi2} >= {threshold}");
    }

    #[test]
    fn within_cluster_frequencies_are_uniform_on_default_spec() {
        // Members of one cluster are drawn uniformly, so conditional on the
        // cluster, appearance counts must fit the uniform distribution. The
        // per-cluster chi-square statistics are summed (df adds up).
        let spec = SyntheticSpec::default_spec(11);
        let (cohort, truth) = generate_synthetic(&spec).unwrap();
        let mut counts = vec![0usize; spec.n_activities];
        for v in &cohort.visits {
            for day in &v.days {
                for &a in day {
                    let code = cohort.vocabulary.activity_code(a);
                    let idx: usize = code[1..].parse().unwrap();
                    counts[idx] += 1;
                }
            }
        }
        let mut chi2 = 0.0;
        let mut df = 0.0;
        for c in 0..spec.n_clusters {
            let members: Vec<usize> =
                (0..spec.n_activities).filter(|&a| spec.activity_cluster[a] == c).collect();
            let total: usize = members.iter().map(|&a| counts[a]).sum();
            let expected = total as f64 / members.len() as f64;
            chi2 += members
                .iter()
                .map(|&a| (counts[a] as f64 - expected).powi(2) / expected)
                .sum::<f64>();
            df += members.len() as f64 - 1.0;
        }
        let threshold = chi2_threshold(df);
        assert!(chi2 < threshold, "chi2 {chi2} >= {threshold}");
        // Sanity: the ground truth matches the spec's assignment.
        for (a, &c) in spec.activity_cluster.iter().enumerate() {
            assert_eq!(truth.cluster_of(&SyntheticSpec::activity_code(a)), Some(c as u32));
        }
    }

    #[test]
    fn default_stats_match_analytic_expectations() {
        // E[activities/day] = 2 + 4 = 6 (cap at 30 is negligible)
        // E[LOS] = 2 + mean(los_lambda) with uniform diagnosis choice.
        let spec = SyntheticSpec::default_spec(5);
        let (cohort, _) = generate_synthetic(&spec).unwrap();
        let stats = cohort_stats(&cohort).unwrap();
        let expected_los = 2.0 + spec.los_lambda.iter().sum::<f64>() / spec.n_diagnoses as f64;
        assert!(
            (stats.avg_activities_per_day - 6.0).abs() / 6.0 < 0.05,
            "activities/day {}",
            stats.avg_activities_per_day
        );
        assert!(
            (stats.avg_los - expected_los).abs() / expected_los < 0.05,
            "avg LOS {} vs {}",
            stats.avg_los,
            expected_los
        );
        assert_eq!(stats.visits, 2000);
        assert_eq!(stats.activity_codes, 200);
        assert_eq!(stats.diagnosis_codes, 20);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = SyntheticSpec::with_counts(10, 20, 4, 3, 2, 0);
        spec.phase_cluster_weights[0][0][0] += 0.5;
        assert!(matches!(spec.validate(), Err(CorpusError::InvalidSpec(_))));

        let mut spec = SyntheticSpec::with_counts(10, 20, 4, 3, 2, 0);
        spec.activity_cluster[3] = 99;
        assert!(spec.validate().is_err());

        // A cluster with no members cannot be sampled from.
        let mut spec = SyntheticSpec::with_counts(10, 20, 4, 3, 2, 0);
        for c in spec.activity_cluster.iter_mut() {
            *c = 0;
        }
        assert!(spec.validate().is_err());
    }

    #[test]
    fn phases_partition_every_stay() {
        for los in 2..=12 {
            let phases: Vec<usize> = (1..=los).map(|t| day_phase(t, los)).collect();
            assert_eq!(phases[0], 0);
            assert_eq!(*phases.last().unwrap(), 2.min(los - 1));
            assert!(phases.windows(2).all(|w| w[0] <= w[1]), "phases must not decrease");
        }
    }
}
