use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore<f32>) -> Self {
        let zeros = |i| Tensor::zeros(&params.get(i).shape);
        AdamState {
            m: (0..params.len()).map(zeros).collect(),
            v: (0..params.len()).map(zeros).collect(),
            t: 0,
        }
    }

    pub(crate) fn to_store(&self, params: &ParamStore<f32>) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        for (prefix, moments) in [("m", &self.m), ("v", &self.v)] {
            for (i, t) in moments.iter().enumerate() {
                s.add(format!("{prefix}.{}", params.name(i)), t.clone(), false);
            }
        }
        s
    }
}

/// One bias-corrected Adam update of every trainable parameter.
///
/// Gradients are validated before anything is modified.
pub fn adam_step(params: &mut ParamStore<f32>, grads: &[Tensor<f32>], state: &mut AdamState, hp: &AdamParams) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradients and {} moments for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape != params.get(i).shape {
            return Err(Error::ShapeMismatch(format!("gradient for {} has shape {:?}", params.name(i), g.shape)));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(params.name(i).to_string()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        if !params.is_trainable(i) {
            continue;
        }
        let (m, v) = (&mut state.m[i].data, &mut state.v[i].data);
        let theta = &mut params.get_mut(i).data;
        for j in 0..g.data.len() {
            let gj = g.data[j] as f64;
            let mj = hp.beta1 * m[j] as f64 + (1.0 - hp.beta1) * gj;
            let vj = hp.beta2 * v[j] as f64 + (1.0 - hp.beta2) * gj * gj;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let step = hp.lr * (mj / c1) / ((vj / c2).sqrt() + hp.eps);
            theta[j] = (theta[j] as f64 - step) as f32;
        }
    }
    Ok(())
}
