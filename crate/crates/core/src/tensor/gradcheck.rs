//! Finite-difference verification of backward passes.

use super::graph::{Graph, NodeId};
use super::store::ParamStore;

/// Worst offender found by [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates_checked: usize,
}

/// Compares analytic gradients against central finite differences with step
/// `h` for every coordinate of every parameter in `store`.
///
/// `build` must construct the loss from scratch on each call (all parameter
/// reads routed through [`Graph::param`]) and be deterministic; it is invoked
/// once for the analytic side and twice per coordinate with the parameter
/// perturbed in place. The relative error per coordinate is
/// |analytic − numeric| / max(|analytic|, |numeric|, 1e-8).
pub fn grad_check<F>(store: &mut ParamStore, h: f64, mut build: F) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> (Graph, NodeId),
{
    let analytic = {
        let (graph, loss) = build(store);
        graph.backward(loss).expect("grad_check loss must be a finite scalar")
    };
    let loss_value = |s: &ParamStore, build: &mut F| -> f64 {
        let (graph, loss) = build(s);
        graph.value(loss).scalar_value()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_coordinate: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates_checked: 0,
    };

    for id in store.ids().collect::<Vec<_>>() {
        let n = store.get(id).numel();
        for coord in 0..n {
            let original = store.get(id).data()[coord];
            store.get_mut(id).data_mut()[coord] = original + h;
            let plus = loss_value(store, &mut build);
            store.get_mut(id).data_mut()[coord] = original - h;
            let minus = loss_value(store, &mut build);
            store.get_mut(id).data_mut()[coord] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(id).map(|t| t.data()[coord]).unwrap_or(0.0);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.coordinates_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = store.name(id).to_string();
                report.worst_coordinate = coord;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report
}
