//! One module per subcommand, plus the loading helpers they share.

mod eval;
mod export;
mod finetune;
mod nearest;
mod pretrain;
mod stats;
mod synth;

pub use eval::eval;
pub use export::export;
pub use finetune::finetune;
pub use nearest::nearest;
pub use pretrain::pretrain;
pub use stats::stats;
pub use synth::synth;

use std::path::Path;

use inpatient2vec::corpus::{filter_cohort, load_cohort, Cohort, FilterConfig};

use crate::CliError;

/// Loads a cohort file and applies the admission filter, rejecting the run
/// up front when nothing survives.
pub(crate) fn load_filtered(path: &Path, filter: &FilterConfig) -> Result<Cohort, CliError> {
    let cohort = load_cohort(path)?;
    let filtered = filter_cohort(&cohort, filter);
    if filtered.visits.is_empty() {
        return Err(CliError::usage(format!(
            "no admissions survive the filter (LOS {}..={}, diagnosis visits {}..={})",
            filter.min_los, filter.max_los, filter.min_diag_visits, filter.max_diag_visits
        )));
    }
    Ok(filtered)
}
