//! Evaluation report assembly: a JSON-serializable summary plus an aligned
//! plain-text table of the downstream comparison.

use serde::{Deserialize, Serialize};

use super::{LosReport, RecallReport};

/// Intrusion evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrusionSummary {
    pub n_sets: usize,
    /// Oracle precision with true cluster labels.
    pub precision: f64,
    /// Oracle precision with shuffled labels (chance control).
    pub control_precision: f64,
}

/// Diagnosis clustering summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringSummary {
    pub k: usize,
    /// Which reduction of the day-index matrices produced the vectors.
    pub mode: String,
    pub nmi: f64,
    /// NMI of the same clustering against shuffled family labels.
    pub control_nmi: f64,
}

/// One downstream method's row in the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub recall_at_a: f64,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub recall_at_20: f64,
    /// Remaining-LOS RMSE for the matching arm, when evaluated.
    pub los_rmse: Option<f64>,
}

impl MethodRow {
    pub fn from_reports(method: &str, recall: &RecallReport, los: Option<&LosReport>) -> MethodRow {
        MethodRow {
            method: method.to_string(),
            recall_at_a: recall.recall_at_a,
            recall_at_5: recall.recall_at_5,
            recall_at_10: recall.recall_at_10,
            recall_at_20: recall.recall_at_20,
            los_rmse: los.map(|l| l.rmse),
        }
    }
}

/// Everything the `eval` pipeline produces, serializable as one JSON object.
/// Sections are optional so partial runs (for example, embeddings-only) still
/// serialize cleanly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intrusion: Option<IntrusionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clustering: Option<ClusteringSummary>,
    /// Downstream comparison rows (fine-tuned arms and baselines).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub methods: Vec<MethodRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub next_day: Option<RecallReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub los: Option<LosReport>,
}

/// Renders the downstream comparison as an aligned text table with the
/// conventional column set.
pub fn render_recall_table(rows: &[MethodRow]) -> String {
    let headers = ["METHOD", "RECALL@A", "RECALL@5", "RECALL@10", "RECALL@20", "LOS_RMSE"];
    let method_width =
        rows.iter().map(|r| r.method.len()).chain([headers[0].len()]).max().unwrap_or(6);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<method_width$}  {:>9}  {:>9}  {:>9}  {:>9}  {:>9}\n",
        headers[0], headers[1], headers[2], headers[3], headers[4], headers[5],
    ));
    for row in rows {
        let rmse = match row.los_rmse {
            Some(v) => format!("{v:.4}"),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{:<method_width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9}\n",
            row.method, row.recall_at_a, row.recall_at_5, row.recall_at_10, row.recall_at_20, rmse,
        ));
    }
    out
}

/// Headline numbers reported by the original evaluation on a private
/// insurance-claims dataset. That dataset is not available, so these are
/// context for reading the table format — not reproducible targets.
pub mod reference {
    /// (method, recall@A, recall@5, recall@10, recall@20, LOS RMSE).
    pub const ORIGINAL_ROWS: [(&str, f64, f64, f64, f64, f64); 2] = [
        ("original+dipole", 0.7542, 0.4631, 0.7303, 0.8579, 3.3465),
        ("original+t-lstm", 0.7537, 0.4652, 0.7298, 0.8507, 3.3084),
    ];
}
