use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::store::{ParamId, ParamStore};
use super::tensor::Tensor;

/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Largest relative error between backward-pass gradients and central
/// differences, over every element of every input.
///
/// `build` receives a fresh graph, a store holding `inputs` as trainable
/// parameters, and their leaf variables, and must return a scalar node.
pub fn finite_difference_check<F>(inputs: &[Tensor<f64>], eps: f64, training: bool, build: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    for (i, t) in inputs.iter().enumerate() {
        store.add(format!("input{i}"), t.clone(), true);
    }
    let coords: Vec<(usize, usize)> = (0..store.len()).flat_map(|id| (0..store.get(id).len()).map(move |j| (id, j))).collect();
    let leaves = |g: &mut Graph<f64>, store: &ParamStore<f64>| -> Result<Var> {
        let vars: Vec<Var> = (0..store.len()).map(|i| g.param(store, i)).collect();
        build(g, store, &vars)
    };
    store_gradient_check(&mut store, &coords, eps, training, leaves)
}

/// Like [`finite_difference_check`], but over chosen `(param, element)` coordinates of an existing store.
///
/// The store is restored before returning.
pub fn store_gradient_check<F>(
    store: &mut ParamStore<f64>,
    coords: &[(ParamId, usize)],
    eps: f64,
    training: bool,
    build: F,
) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let eval = |store: &ParamStore<f64>| -> Result<(Graph<f64>, Var)> {
        let mut g = Graph::new(training, 0, 0);
        let loss = build(&mut g, store)?;
        Ok((g, loss))
    };
    let value = |store: &ParamStore<f64>| -> Result<f64> {
        let (g, loss) = eval(store)?;
        let v = g.value(loss);
        if v.len() != 1 {
            return Err(Error::NonScalarLoss(v.shape.clone()));
        }
        Ok(v.data[0])
    };
    let (g, loss) = eval(store)?;
    let analytic = g.backward(loss, store)?;
    let mut worst = 0.0f64;
    for &(id, j) in coords {
        let orig = store.get(id).data[j];
        store.get_mut(id).data[j] = orig + eps;
        let up = value(store)?;
        store.get_mut(id).data[j] = orig - eps;
        let down = value(store)?;
        store.get_mut(id).data[j] = orig;
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[id].data[j], fd));
    }
    Ok(worst)
}
