use super::graph::{Graph, NodeId};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `|a - n| / max(|a|, |n|, 1e-8)` with Euclidean norms over the checked
/// coordinates. Coordinates whose true gradient is near zero would otherwise
/// be judged on finite-difference round-off alone.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-8)
}

fn eval_scalar(f: &impl Fn(&mut Graph, NodeId) -> Result<NodeId>, point: Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.input(point);
    let root = f(&mut g, x)?;
    let v = g.value(root).item();
    if !v.is_finite() {
        return Err(Error::NonFinite("function value during gradient check".into()));
    }
    Ok(v)
}

/// Compares the reverse-mode gradient of `f` at `point` against central
/// differences with step `h`, returning the relative error over all
/// coordinates.
pub fn check_gradient<F>(f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let x = g.variable(point.clone());
    let root = f(&mut g, x)?;
    if !g.value(root).item().is_finite() {
        return Err(Error::NonFinite("function value during gradient check".into()));
    }
    let grads = g.backward(root)?;
    let analytic = grads
        .wrt(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.shape()));
    let mut numeric = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        numeric.push((eval_scalar(&f, plus)? - eval_scalar(&f, minus)?) / (2.0 * h));
    }
    Ok(relative_error(analytic.data(), &numeric))
}

/// Per-parameter gradient check of a scalar loss built from `store`.
///
/// Checks at most `max_coords` evenly spaced coordinates of each parameter
/// (all of them when `None`). Returns `(name, relative error)` pairs.
pub fn check_param_gradients<F>(
    store: &ParamStore,
    f: F,
    h: f64,
    max_coords: Option<usize>,
) -> Result<Vec<(String, f64)>>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let root = f(&mut g, store)?;
    let grads = g.backward(root)?.param_grads(&g);
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let r = f(&mut g, s)?;
        let v = g.value(r).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("loss during gradient check".into()));
        }
        Ok(v)
    };
    let mut out = Vec::new();
    let mut work = store.clone();
    for (name, analytic) in &grads {
        let n = analytic.len();
        let stride = match max_coords {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let (mut a, mut num) = (Vec::new(), Vec::new());
        for i in (0..n).step_by(stride) {
            let orig = work.get(name).expect("param").data()[i];
            work.get_mut(name).expect("param").data_mut()[i] = orig + h;
            let fp = eval(&work)?;
            work.get_mut(name).expect("param").data_mut()[i] = orig - h;
            let fm = eval(&work)?;
            work.get_mut(name).expect("param").data_mut()[i] = orig;
            a.push(analytic.data()[i]);
            num.push((fp - fm) / (2.0 * h));
        }
        out.push((name.clone(), relative_error(&a, &num)));
    }
    Ok(out)
}
