//! Central finite-difference verification of analytic gradients.

use super::graph::ParamStore;
use super::{NnError, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Relative error `|a - n| / max(|a| + |n|, floor)`.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

/// Compares `grad_fn` against central differences of `loss_fn` for every
/// scalar parameter (or every `stride`-th one).
pub fn check_gradients(
    params: &ParamStore,
    loss_fn: impl Fn(&ParamStore) -> Result<f64, NnError>,
    grad_fn: impl Fn(&ParamStore) -> Result<Vec<Tensor>, NnError>,
    step: f64,
    floor: f64,
    stride: usize,
) -> Result<GradCheckReport, NnError> {
    let analytic = grad_fn(params)?;
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for pid in 0..params.len() {
        for i in (0..params.get(pid).len()).step_by(stride.max(1)) {
            let orig = params.get(pid).data()[i];
            work.get_mut(pid).data_mut()[i] = orig + step;
            let up = loss_fn(&work)?;
            work.get_mut(pid).data_mut()[i] = orig - step;
            let down = loss_fn(&work)?;
            work.get_mut(pid).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let e = rel_error(analytic[pid].data()[i], numeric, floor);
            report.checked += 1;
            if report.worst.is_none() || e > report.max_rel_error {
                report.max_rel_error = e;
                report.worst = Some((params.names()[pid].clone(), i));
            }
        }
    }
    Ok(report)
}
