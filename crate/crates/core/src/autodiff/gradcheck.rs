//! Central finite-difference checks of analytic gradients at `f64`.

use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::params::ParamStore;
use crate::autodiff::tensor::Tensor;
use crate::error::Result;

/// Differences at or below this are treated as agreement regardless of scale.
pub const ABS_TOL: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Largest relative error among entries whose absolute error exceeds
    /// [`ABS_TOL`]; 0 when every entry is within it.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub worst: String,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < REL_TOL
    }

    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        let rel = if abs <= ABS_TOL {
            0.0
        } else {
            abs / analytic.abs().max(numeric.abs())
        };
        self.checked += 1;
        self.max_abs_error = self.max_abs_error.max(abs);
        if rel > self.max_rel_error {
            self.max_rel_error = rel;
            self.worst = format!("{} analytic={analytic:e} numeric={numeric:e}", label());
        }
    }

    pub fn merge(mut self, other: GradCheckReport) -> Self {
        self.checked += other.checked;
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self
    }
}

/// Check the gradient of a scalar function of several input tensors.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (k, t) in inputs.iter().enumerate() {
        for i in 0..t.len() {
            let orig = t.data()[i];
            work[k].data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            report.record(|| format!("input {k}[{i}]"), analytic[k][i], (plus - minus) / (2.0 * step));
        }
    }
    Ok(report)
}

/// Check the gradient of a scalar function with respect to every trainable
/// entry of a parameter store.
pub fn check_params<F>(store: &mut ParamStore<f64>, step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    store.zero_grads();
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    g.backward(out)?;
    store.accumulate_grads(&g);

    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let n = store.entry(id).value.len();
        for i in 0..n {
            let orig = store.entry(id).value.data()[i];
            let analytic = store.entry(id).grad.data()[i];
            store.entry_mut(id).value.data_mut()[i] = orig + step;
            let plus = {
                let mut g = Graph::new();
                let out = f(&mut g, store)?;
                g.value(out).item()
            };
            store.entry_mut(id).value.data_mut()[i] = orig - step;
            let minus = {
                let mut g = Graph::new();
                let out = f(&mut g, store)?;
                g.value(out).item()
            };
            store.entry_mut(id).value.data_mut()[i] = orig;
            let name = &store.entry(id).name;
            report.record(|| format!("{name}[{i}]"), analytic, (plus - minus) / (2.0 * step));
        }
    }
    Ok(report)
}
