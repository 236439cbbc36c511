//! Central finite-difference oracle for reverse-mode gradients.

use super::graph::{Graph, Var};
use super::params::ParameterSet;
use super::tensor::Tensor;
use super::{GradError, Result};

/// How analytic and numeric gradients are compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ErrorMetric {
    /// `|a - n| / max(|a|, |n|)` for every element.
    #[default]
    Elementwise,
    /// `||a - n|| / max(||a||, ||n||)` per checked tensor. Robust to single
    /// elements whose true gradient sits below finite-difference resolution.
    Normwise,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    pub metric: ErrorMetric,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            metric: ErrorMetric::Elementwise,
        }
    }
}

impl GradCheckConfig {
    pub fn normwise() -> Self {
        Self {
            metric: ErrorMetric::Normwise,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct InputReport {
    pub name: String,
    /// Largest elementwise relative error.
    pub max_rel_error: f64,
    /// Relative error of the whole gradient tensor in the 2-norm.
    pub norm_rel_error: f64,
    /// Flat index of the element with the largest error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
    /// Set when an analytic gradient was non-finite.
    pub failure: Option<String>,
    pub tolerance: f64,
    pub metric: ErrorMetric,
}

impl InputReport {
    pub fn error(&self, metric: ErrorMetric) -> f64 {
        match metric {
            ErrorMetric::Elementwise => self.max_rel_error,
            ErrorMetric::Normwise => self.norm_rel_error,
        }
    }
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.inputs.iter().all(|r| r.error(self.metric) <= self.tolerance)
    }

    /// Largest error under the configured metric.
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.error(self.metric)).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&InputReport> {
        self.inputs.iter().max_by(|a, b| a.error(self.metric).total_cmp(&b.error(self.metric)))
    }
}

const FLOOR: f64 = 1e-8;

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

fn check_leaves(
    graph: &mut Graph<f64>,
    out: Var,
    leaves: &[(Var, String)],
    cfg: GradCheckConfig,
) -> Result<GradCheckReport> {
    let grads = graph.backward(out)?;
    let mut report = GradCheckReport {
        inputs: Vec::new(),
        failure: None,
        tolerance: cfg.tolerance,
        metric: cfg.metric,
    };
    for (leaf, name) in leaves {
        let base = graph.value(*leaf).clone();
        let analytic = grads.get_or_zeros(*leaf, &base);
        if let Some(i) = analytic.data().iter().position(|g| !g.is_finite()) {
            report.failure = Some(format!("non-finite analytic gradient at {name}[{i}]"));
            return Ok(report);
        }
        let mut entry = InputReport {
            name: name.clone(),
            max_rel_error: 0.0,
            norm_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for i in 0..base.len() {
            let mut probe = base.clone();
            probe.data_mut()[i] = base.data()[i] + cfg.step;
            graph.set_leaf(*leaf, probe.clone())?;
            graph.replay()?;
            let up = graph.value(out).item();
            probe.data_mut()[i] = base.data()[i] - cfg.step;
            graph.set_leaf(*leaf, probe)?;
            graph.replay()?;
            let down = graph.value(out).item();
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = analytic.data()[i];
            let err = rel_error(a, numeric);
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
            if err > entry.max_rel_error || i == 0 {
                entry.max_rel_error = err;
                entry.worst_index = i;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        entry.norm_rel_error = diff2.sqrt() / f64::max(a2, n2).sqrt().max(FLOOR);
        graph.set_leaf(*leaf, base)?;
        graph.replay()?;
        report.inputs.push(entry);
    }
    Ok(report)
}

/// Check the gradient of a scalar-valued function of `inputs`.
///
/// `f` receives a fresh graph and one leaf per input and must return a
/// single-element output. Perturbed evaluations replay the recorded graph.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: FnOnce(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| graph.constant(t.clone())).collect();
    let out = f(&mut graph, &leaves)?;
    if graph.value(out).len() != 1 {
        return Err(GradError::NonScalarOutput(graph.value(out).shape().to_vec()));
    }
    let named: Vec<(Var, String)> = leaves
        .iter()
        .enumerate()
        .map(|(i, v)| (*v, format!("input{i}")))
        .collect();
    check_leaves(&mut graph, out, &named, cfg)
}

/// Check gradients with respect to every parameter the function binds.
pub fn grad_check_params<F>(f: F, params: &ParameterSet<f64>, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: FnOnce(&mut Graph<f64>, &ParameterSet<f64>) -> Result<Var>,
{
    let mut graph = Graph::new();
    let out = f(&mut graph, params)?;
    if graph.value(out).len() != 1 {
        return Err(GradError::NonScalarOutput(graph.value(out).shape().to_vec()));
    }
    let leaves = graph.bindings().to_vec();
    check_leaves(&mut graph, out, &leaves, cfg)
}
