//! Central finite-difference oracle for analytic gradients.

use crate::{Binding, Error, Graph, ParamStore, Result, Var};

/// Outcome of [`finite_diff_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / (|analytic| + |numeric| + 1e-12)`.
    pub max_rel_error: f64,
    pub worst: Option<WorstCoordinate>,
    pub coordinates: usize,
    /// One entry per parameter tensor, in name order.
    pub params: Vec<ParamError>,
}

/// Agreement on one whole parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamError {
    pub param: String,
    /// `‖analytic − numeric‖₂ / (‖analytic‖₂ + ‖numeric‖₂ + 1e-12)`.
    pub rel_error: f64,
    pub analytic_norm: f64,
}

impl GradCheckReport {
    /// Largest tensor-wise relative error over all parameters.
    pub fn max_param_error(&self) -> f64 {
        self.params.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorstCoordinate {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

fn evaluate<F>(params: &ParamStore, f: &mut F) -> Result<f64>
where
    F: FnMut(&mut Graph, &Binding) -> Result<Var>,
{
    let mut graph = Graph::new();
    let binding = params.bind(&mut graph);
    let loss = f(&mut graph, &binding)?;
    let value = graph.value(loss);
    if value.len() != 1 {
        return Err(Error::Contract("gradient check needs a scalar function".into()));
    }
    Ok(value.item())
}

/// Compares reverse-mode gradients of `f` against central differences with
/// step `h` on every coordinate of every parameter.
///
/// `f` must be deterministic: any sampling noise has to be frozen by the
/// caller. Two evaluations at the base point that differ bitwise are
/// reported as a contract error.
pub fn finite_diff_check<F>(params: &ParamStore, h: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &Binding) -> Result<Var>,
{
    let first = evaluate(params, &mut f)?;
    let second = evaluate(params, &mut f)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Contract(format!("function is not deterministic ({} vs {})", first, second)));
    }

    let mut graph = Graph::new();
    let binding = params.bind(&mut graph);
    let loss = f(&mut graph, &binding)?;
    let mut grads = graph.backward(loss)?;
    let analytic = binding.gradients(&mut grads);

    let mut work = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, coordinates: 0, params: Vec::new() };
    for name in names {
        let n = params.get(&name).map_or(0, |t| t.len());
        let grad = analytic.get(&name).ok_or_else(|| Error::Contract(format!("no gradient for `{}`", name)))?;
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let base = params.get(&name).expect("present").data()[i];
            work.get_mut(&name).expect("present").data_mut()[i] = base + h;
            let plus = evaluate(&work, &mut f)?;
            work.get_mut(&name).expect("present").data_mut()[i] = base - h;
            let minus = evaluate(&work, &mut f)?;
            work.get_mut(&name).expect("present").data_mut()[i] = base;

            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(grad[i], numeric);
            diff2 += (grad[i] - numeric).powi(2);
            a2 += grad[i].powi(2);
            n2 += numeric.powi(2);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(WorstCoordinate { param: name.clone(), index: i, analytic: grad[i], numeric });
            }
        }
        let (a, num) = (a2.sqrt(), n2.sqrt());
        report.params.push(ParamError { param: name, rel_error: diff2.sqrt() / (a + num + 1e-12), analytic_norm: a });
    }
    Ok(report)
}
