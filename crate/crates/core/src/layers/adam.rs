use crate::error::{Error, Result};
use crate::layers::ParamSet;
use crate::tensor::{Element, Tensor};

pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments and hyperparameters for one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamState<T: Element = f32> {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of completed updates.
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(params: &ParamSet<T>, alpha: f64, beta1: f64, beta2: f64) -> Self {
        let zeros = || params.values().iter().map(|p| Tensor::zeros(p.shape().clone())).collect();
        AdamState {
            alpha,
            beta1,
            beta2,
            eps: ADAM_EPS,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update of every parameter in place.
///
/// `t` is incremented before the bias corrections are formed. Non-finite
/// gradients abort the update and leave parameters and state untouched.
pub fn adam_step<T: Element>(params: &mut ParamSet<T>, grads: &[Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Invalid(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", p.dims(), g.dims()));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of `{name}`")));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = T::from_f64(1.0 - state.beta1.powi(t));
    let bc2 = T::from_f64(1.0 - state.beta2.powi(t));
    let (b1, b2) = (T::from_f64(state.beta1), T::from_f64(state.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - state.beta1), T::from_f64(1.0 - state.beta2));
    let alpha = T::from_f64(state.alpha);
    let eps = T::from_f64(state.eps);

    for (i, p) in params.values_mut().iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, theta) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + one_b1 * g[j];
            v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *theta -= alpha * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
