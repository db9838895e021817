//! Cohort admission filters: length-of-stay bounds first, then diagnosis
//! frequency bounds counted on the LOS-filtered population.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Cohort;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub min_los: usize,
    pub max_los: usize,
    pub min_diag_visits: usize,
    pub max_diag_visits: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { min_los: 2, max_los: 50, min_diag_visits: 100, max_diag_visits: 3000 }
    }
}

/// Drops visits with LOS outside `[min_los, max_los]`, then drops every visit
/// of any diagnosis whose visit count — counted after the LOS filter — falls
/// outside `[min_diag_visits, max_diag_visits]`. The vocabulary is rebuilt
/// from the survivors, so activity and diagnosis ids are re-assigned. May
/// return an empty cohort (zero visits, empty vocabulary).
pub fn filter_cohort(cohort: &Cohort, config: &FilterConfig) -> Cohort {
    let los_ok: Vec<bool> = cohort
        .visits
        .iter()
        .map(|v| (config.min_los..=config.max_los).contains(&v.los()))
        .collect();

    let surviving: Vec<_> =
        cohort.visits.iter().zip(&los_ok).filter(|(_, ok)| **ok).map(|(v, _)| v).collect();
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for v in &surviving {
        *counts.entry(v.diagnosis).or_insert(0) += 1;
    }

    let keep: Vec<&super::Visit> = surviving
        .into_iter()
        .filter(|v| {
            let n = counts[&v.diagnosis];
            (config.min_diag_visits..=config.max_diag_visits).contains(&n)
        })
        .collect();

    if keep.is_empty() {
        return Cohort {
            visits: Vec::new(),
            vocabulary: super::Vocabulary::build(&[]),
            provenance: cohort.provenance.clone(),
            duplicates_merged: 0,
        };
    }

    // Re-express survivors as codes and rebuild, so the vocabulary only
    // contains codes that still occur.
    let raw: Vec<super::CodeVisit> = keep
        .iter()
        .map(|v| super::CodeVisit {
            visit_id: v.id.clone(),
            diagnosis: cohort.vocabulary.diagnosis_code(v.diagnosis).to_string(),
            days: v
                .days
                .iter()
                .map(|day| {
                    day.iter().map(|&a| cohort.vocabulary.activity_code(a).to_string()).collect()
                })
                .collect(),
        })
        .collect();
    Cohort::from_code_visits(raw, cohort.provenance.clone())
        .expect("non-empty survivor set always assembles")
}
