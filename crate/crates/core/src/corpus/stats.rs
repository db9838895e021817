//! Descriptive statistics for a cohort: the six headline rows reported for
//! inpatient datasets of this shape.

use serde::{Deserialize, Serialize};

use super::{Cohort, CorpusError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub visits: usize,
    pub days: usize,
    pub diagnosis_codes: usize,
    pub activity_codes: usize,
    pub avg_activities_per_day: f64,
    pub avg_los: f64,
}

pub fn cohort_stats(cohort: &Cohort) -> Result<CohortStats, CorpusError> {
    if cohort.visits.is_empty() {
        return Err(CorpusError::EmptyCohort);
    }
    let days = cohort.total_days();
    let mentions = cohort.total_activity_mentions();
    Ok(CohortStats {
        visits: cohort.visits.len(),
        days,
        diagnosis_codes: cohort.vocabulary.n_diagnoses(),
        activity_codes: cohort.vocabulary.n_activities(),
        avg_activities_per_day: mentions as f64 / days as f64,
        avg_los: days as f64 / cohort.visits.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CodeVisit;

    #[test]
    fn hand_counted_single_visit() {
        let raw = vec![CodeVisit {
            visit_id: "v1".into(),
            diagnosis: "D0".into(),
            days: vec![
                vec!["A".into(), "B".into(), "C".into()],
                vec!["A".into(), "D".into(), "E".into()],
            ],
        }];
        let cohort = Cohort::from_code_visits(raw, "test".into()).unwrap();
        let stats = cohort_stats(&cohort).unwrap();
        assert_eq!(stats.visits, 1);
        assert_eq!(stats.days, 2);
        assert_eq!(stats.diagnosis_codes, 1);
        assert_eq!(stats.activity_codes, 5);
        assert_eq!(stats.avg_activities_per_day, 3.0);
        assert_eq!(stats.avg_los, 2.0);
    }

    #[test]
    fn empty_cohort_is_an_error() {
        let cohort = Cohort {
            visits: Vec::new(),
            vocabulary: crate::corpus::Vocabulary::build(&[]),
            provenance: "test".into(),
            duplicates_merged: 0,
        };
        assert!(matches!(cohort_stats(&cohort), Err(CorpusError::EmptyCohort)));
    }
}
