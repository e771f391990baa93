use std::collections::BTreeMap;

use super::ParamStore;

/// Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update of every trainable parameter, then zeroes
/// all gradient accumulators.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (name, p) in params.params.iter_mut() {
        if p.trainable {
            let n = p.grad.len();
            let m = state.first.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = state.second.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(&p.grad).zip(m).zip(v) {
                *m = state.beta1 * *m + (1.0 - state.beta1) * g;
                *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
            }
        }
        p.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}
