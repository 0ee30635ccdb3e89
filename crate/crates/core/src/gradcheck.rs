//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport<T> {
    pub max_rel_error: T,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: Vec<T>,
    pub numeric: Vec<T>,
}

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error<T: Scalar>(analytic: T, numeric: T) -> T {
    let floor = T::from_f64_lossy(1e-8);
    (analytic - numeric).abs() / floor.max(analytic.abs() + numeric.abs())
}

fn evaluate<T, F>(build: &F, param: Tensor<T>) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, NodeId) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let p = g.parameter(param);
    let out = build(&mut g, p)?;
    scalar_value(&g, out)
}

fn scalar_value<T: Scalar>(g: &Graph<T>, out: NodeId) -> Result<T> {
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::Shape(format!(
            "gradient check needs a scalar-valued graph, output has shape {:?}",
            v.shape()
        )));
    }
    Ok(v.data()[0])
}

/// Max relative error over every entry of `param`.
///
/// `build` receives a fresh graph and the node holding `param` and must
/// return a scalar output node.
pub fn check_gradients<T, F>(param: &Tensor<T>, eps: T, build: F) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, NodeId) -> Result<NodeId>,
{
    let all: Vec<usize> = (0..param.len()).collect();
    Ok(check_gradients_at(param, eps, &all, build)?.max_rel_error)
}

/// Like [`check_gradients`] but only perturbs the listed flat indices.
pub fn check_gradients_at<T, F>(
    param: &Tensor<T>,
    eps: T,
    indices: &[usize],
    build: F,
) -> Result<GradCheckReport<T>>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, NodeId) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let p = g.parameter(param.clone());
    let out = build(&mut g, p)?;
    scalar_value(&g, out)?;
    let grads = g.backward(out)?;
    let full = grads.get_or_zeros(p, param.shape());

    let two = T::one() + T::one();
    let mut report = GradCheckReport {
        max_rel_error: T::zero(),
        worst_index: indices.first().copied().unwrap_or(0),
        analytic: Vec::with_capacity(indices.len()),
        numeric: Vec::with_capacity(indices.len()),
    };
    for &i in indices {
        if i >= param.len() {
            return Err(Error::InvalidArgument(format!(
                "index {i} out of range for parameter of length {}",
                param.len()
            )));
        }
        let mut plus = param.clone();
        plus.data_mut()[i] += eps;
        let mut minus = param.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (evaluate(&build, plus)? - evaluate(&build, minus)?) / (two * eps);
        let analytic = full.data()[i];
        let err = relative_error(analytic, numeric);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
        report.analytic.push(analytic);
        report.numeric.push(numeric);
    }
    Ok(report)
}
