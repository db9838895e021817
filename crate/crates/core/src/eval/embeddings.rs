//! Extracting evaluation vectors from a trained model: raw and
//! day-contextualized activity embeddings, diagnosis vectors, and id-indexed
//! ground-truth labels.

use std::collections::BTreeMap;

use crate::corpus::{Cohort, GroundTruth, Vocabulary};
use crate::model::Model;
use crate::tensor::Graph;
use crate::util::run_indexed;

use super::EvalError;

/// Raw activity embeddings: one row per real activity id (special tokens
/// excluded). These carry the context-free semantics of each code.
pub fn activity_embeddings(model: &Model) -> Vec<Vec<f64>> {
    let table = model.store.get(model.params.activity_table);
    (0..model.vocabulary.n_activities()).map(|a| table.row(a).to_vec()).collect()
}

/// Day-contextualized activity embeddings: for each activity, the mean of its
/// per-token encoder outputs over every occurrence in `cohort` (encoded
/// without masking). Activities that never occur fall back to their raw rows.
pub fn contextual_activity_embeddings(
    model: &Model,
    cohort: &Cohort,
    threads: usize,
) -> Result<Vec<Vec<f64>>, EvalError> {
    if cohort.visits.is_empty() {
        return Err(EvalError::Empty);
    }
    let q = model.config.embed_dim;
    let per_visit = run_indexed(threads, cohort.visits.len(), |v| {
        let visit = &cohort.visits[v];
        let mut g = Graph::new();
        let mut sums: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for (d, day) in visit.days.iter().enumerate() {
            let input = model.assemble_input_sequence(&mut g, day, visit.diagnosis, d + 1, None);
            let out = model.encode_day(&mut g, input, None);
            let rows = g.value(out.per_token);
            for (j, &a) in day.iter().enumerate() {
                let row = rows.row(j + 1);
                let sum = sums.entry(a).or_insert_with(|| vec![0.0; q]);
                for (slot, &x) in sum.iter_mut().zip(row) {
                    *slot += x;
                }
                *counts.entry(a).or_default() += 1;
            }
        }
        (sums, counts)
    });

    let mut sums: Vec<Vec<f64>> = vec![vec![0.0; q]; model.vocabulary.n_activities()];
    let mut counts = vec![0usize; model.vocabulary.n_activities()];
    for (visit_sums, visit_counts) in per_visit {
        for (a, sum) in visit_sums {
            for (slot, x) in sums[a as usize].iter_mut().zip(sum) {
                *slot += x;
            }
        }
        for (a, c) in visit_counts {
            counts[a as usize] += c;
        }
    }
    let raw = activity_embeddings(model);
    Ok(sums
        .into_iter()
        .zip(&counts)
        .enumerate()
        .map(|(a, (sum, &c))| {
            if c == 0 {
                raw[a].clone()
            } else {
                sum.into_iter().map(|x| x / c as f64).collect()
            }
        })
        .collect())
}

/// How a diagnosis's day-index matrix `R_g` is reduced to one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosisVectorMode {
    /// Mean over the day rows (the default).
    DayMean,
    /// The day-1 row only.
    FirstDay,
    /// All rows flattened, zero-padded to the widest diagnosis.
    FlattenPad,
}

impl DiagnosisVectorMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosisVectorMode::DayMean => "day_mean",
            DiagnosisVectorMode::FirstDay => "first_day",
            DiagnosisVectorMode::FlattenPad => "flatten_pad",
        }
    }
}

/// One vector per diagnosis id. Under the `diagnosis_as_activity` ablation
/// every diagnosis has a single token embedding, which all modes return
/// unchanged.
pub fn diagnosis_vectors(model: &Model, mode: DiagnosisVectorMode) -> Vec<Vec<f64>> {
    let n_diag = model.vocabulary.n_diagnoses();
    if let Some(token_table) = model.params.diag_token_table {
        let table = model.store.get(token_table);
        return (0..n_diag).map(|d| table.row(d).to_vec()).collect();
    }
    let q = model.config.embed_dim;
    let widest =
        (0..n_diag).map(|d| model.vocabulary.n_g(d as u32) as usize).max().unwrap_or(0);
    (0..n_diag)
        .map(|d| {
            let table = model.store.get(model.params.diag_tables[d]);
            let rows = table.rows();
            match mode {
                DiagnosisVectorMode::DayMean => (0..q)
                    .map(|j| (0..rows).map(|i| table.get2(i, j)).sum::<f64>() / rows as f64)
                    .collect(),
                DiagnosisVectorMode::FirstDay => table.row(0).to_vec(),
                DiagnosisVectorMode::FlattenPad => {
                    let mut flat = table.data().to_vec();
                    flat.resize(widest * q, 0.0);
                    flat
                }
            }
        })
        .collect()
}

/// Ground-truth activity cluster labels indexed by activity id.
pub fn activity_cluster_ids(
    gt: &GroundTruth,
    vocab: &Vocabulary,
) -> Result<Vec<u32>, EvalError> {
    (0..vocab.n_activities())
        .map(|a| {
            let code = vocab.activity_code(a as u32);
            gt.cluster_of(code).ok_or_else(|| EvalError::MissingGroundTruth(code.to_string()))
        })
        .collect()
}

/// Ground-truth diagnosis family labels indexed by diagnosis id.
pub fn diagnosis_family_ids(
    gt: &GroundTruth,
    vocab: &Vocabulary,
) -> Result<Vec<u32>, EvalError> {
    (0..vocab.n_diagnoses())
        .map(|d| {
            let code = vocab.diagnosis_code(d as u32);
            gt.family_of(code).ok_or_else(|| EvalError::MissingGroundTruth(code.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticSpec};
    use crate::model::{Ablation, Model, ModelConfig};
    use crate::tensor::Tensor;

    fn tiny_config() -> ModelConfig {
        ModelConfig { embed_dim: 8, n_heads: 2, n_layers: 1, ff_dim: 16, lstm_hidden: 6, init_std: 0.05 }
    }

    fn tiny_cohort(seed: u64) -> (Cohort, GroundTruth) {
        generate_synthetic(&SyntheticSpec::with_counts(30, 12, 3, 4, 2, seed)).unwrap()
    }

    #[test]
    fn raw_embeddings_are_the_activity_table_rows() {
        let (cohort, _) = tiny_cohort(1);
        let model = Model::new(tiny_config(), Ablation::default(), cohort.vocabulary.clone(), 5)
            .unwrap();
        let rows = activity_embeddings(&model);
        let table = model.store.get(model.params.activity_table);
        assert_eq!(rows.len(), model.vocabulary.n_activities());
        for (a, row) in rows.iter().enumerate() {
            assert_eq!(row.as_slice(), table.row(a));
        }
        // Special tokens are not part of the evaluation set.
        assert!(rows.len() < table.rows());
    }

    #[test]
    fn diagnosis_vector_modes_reduce_hand_set_tables() {
        let (cohort, _) = tiny_cohort(2);
        let mut model =
            Model::new(tiny_config(), Ablation::default(), cohort.vocabulary.clone(), 5).unwrap();
        let q = model.config.embed_dim;
        // Overwrite diagnosis 0's table with a recognizable ramp.
        let rows = model.vocabulary.n_g(0) as usize;
        let data: Vec<f64> = (0..rows * q).map(|i| i as f64).collect();
        model
            .store
            .set(model.params.diag_tables[0], Tensor::from_vec(&[rows, q], data.clone()).unwrap())
            .unwrap();

        let mean = diagnosis_vectors(&model, DiagnosisVectorMode::DayMean);
        for j in 0..q {
            let oracle = (0..rows).map(|i| (i * q + j) as f64).sum::<f64>() / rows as f64;
            assert_eq!(mean[0][j], oracle);
        }

        let first = diagnosis_vectors(&model, DiagnosisVectorMode::FirstDay);
        assert_eq!(first[0], data[..q].to_vec());

        let widest = (0..model.vocabulary.n_diagnoses())
            .map(|d| model.vocabulary.n_g(d as u32) as usize)
            .max()
            .unwrap();
        let flat = diagnosis_vectors(&model, DiagnosisVectorMode::FlattenPad);
        for v in &flat {
            assert_eq!(v.len(), widest * q);
        }
        assert_eq!(flat[0][..rows * q], data[..]);
        assert!(flat[0][rows * q..].iter().all(|&x| x == 0.0) || rows == widest);
    }

    #[test]
    fn ablated_model_returns_token_rows_for_every_mode() {
        let (cohort, _) = tiny_cohort(3);
        let ablation = Ablation { diagnosis_as_activity: true, pairwise_day_task: false };
        let model = Model::new(tiny_config(), ablation, cohort.vocabulary.clone(), 5).unwrap();
        let table = model.store.get(model.params.diag_token_table.unwrap());
        for mode in
            [DiagnosisVectorMode::DayMean, DiagnosisVectorMode::FirstDay, DiagnosisVectorMode::FlattenPad]
        {
            let vectors = diagnosis_vectors(&model, mode);
            for (d, v) in vectors.iter().enumerate() {
                assert_eq!(v.as_slice(), table.row(d));
            }
        }
    }

    #[test]
    fn contextual_embeddings_average_per_token_outputs() {
        let (cohort, _) = tiny_cohort(4);
        let model = Model::new(tiny_config(), Ablation::default(), cohort.vocabulary.clone(), 5)
            .unwrap();
        let got = contextual_activity_embeddings(&model, &cohort, 1).unwrap();

        // Independent accumulation pass over the same encoder outputs.
        let q = model.config.embed_dim;
        let mut sums = vec![vec![0.0; q]; model.vocabulary.n_activities()];
        let mut counts = vec![0usize; model.vocabulary.n_activities()];
        for visit in &cohort.visits {
            for (d, day) in visit.days.iter().enumerate() {
                let mut g = Graph::new();
                let input =
                    model.assemble_input_sequence(&mut g, day, visit.diagnosis, d + 1, None);
                let out = model.encode_day(&mut g, input, None);
                let rows = g.value(out.per_token);
                for (j, &a) in day.iter().enumerate() {
                    for (slot, &x) in sums[a as usize].iter_mut().zip(rows.row(j + 1)) {
                        *slot += x;
                    }
                    counts[a as usize] += 1;
                }
            }
        }
        let raw = activity_embeddings(&model);
        for a in 0..model.vocabulary.n_activities() {
            let oracle: Vec<f64> = if counts[a] == 0 {
                raw[a].clone()
            } else {
                sums[a].iter().map(|&x| x / counts[a] as f64).collect()
            };
            for (x, y) in got[a].iter().zip(&oracle) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn contextual_embeddings_are_thread_invariant() {
        let (cohort, _) = tiny_cohort(5);
        let model = Model::new(tiny_config(), Ablation::default(), cohort.vocabulary.clone(), 5)
            .unwrap();
        let one = contextual_activity_embeddings(&model, &cohort, 1).unwrap();
        let four = contextual_activity_embeddings(&model, &cohort, 4).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn ground_truth_labels_line_up_with_vocabulary_ids() {
        let (cohort, gt) = tiny_cohort(6);
        let clusters = activity_cluster_ids(&gt, &cohort.vocabulary).unwrap();
        assert_eq!(clusters.len(), cohort.vocabulary.n_activities());
        for (a, &c) in clusters.iter().enumerate() {
            let code = cohort.vocabulary.activity_code(a as u32);
            assert_eq!(gt.cluster_of(code), Some(c));
        }
        let families = diagnosis_family_ids(&gt, &cohort.vocabulary).unwrap();
        assert_eq!(families.len(), cohort.vocabulary.n_diagnoses());
        for (d, &f) in families.iter().enumerate() {
            let code = cohort.vocabulary.diagnosis_code(d as u32);
            assert_eq!(gt.family_of(code), Some(f));
        }
    }
}
