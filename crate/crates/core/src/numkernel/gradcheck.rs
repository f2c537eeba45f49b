//! Central finite-difference gradient checking.
//!
//! Used by the test suites as an oracle for [`Graph::backward`]: numerical
//! derivatives come from forward evaluations only.

use super::graph::{Graph, Var};
use super::param::ParamStore;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradReport {
    /// max over entries of |analytic - numeric| / max(1, |analytic|)
    pub max_rel_error: f64,
    pub worst_param: String,
    pub entries_checked: usize,
}

/// Compares analytic gradients of every parameter in `store` against central
/// differences with step [`DEFAULT_STEP`].
pub fn check_gradients<F>(store: &mut ParamStore, build: F) -> Result<GradReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    check_gradients_with_step(store, DEFAULT_STEP, build)
}

pub fn check_gradients_with_step<F>(
    store: &mut ParamStore,
    step: f64,
    mut build: F,
) -> Result<GradReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    g.backward(loss, store)?;

    let mut eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, s)?;
        Ok(g.value(loss).item())
    };

    let mut report = GradReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        entries_checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).data().len();
        for k in 0..n {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + step;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[k] = orig - step;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let analytic = store.grad(id).data()[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(1.0);
            report.entries_checked += 1;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = if rel.is_finite() { rel } else { f64::INFINITY };
                report.worst_param = format!("{}[{k}]", store.get(id).name);
            }
        }
    }
    Ok(report)
}
