//! Adam optimizer with bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Per-parameter first/second moment buffers keyed by parameter path name,
/// plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

impl AdamState {
    pub fn new() -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over `(name, tensor)` pairs. Every tensor must carry a
/// populated gradient buffer; gradients are zeroed after the update and the
/// step counter advances by one.
pub fn adam_step<'a, I>(params: I, state: &mut AdamState, lr: f64) -> Result<()>
where
    I: IntoIterator<Item = (String, &'a mut Tensor)>,
{
    if lr <= 0.0 {
        return Err(Error::Contract(format!("learning rate must be > 0, got {lr}")));
    }
    state.step += 1;
    let t = state.step;
    let bias1 = 1.0 - state.beta1.powi(t as i32);
    let bias2 = 1.0 - state.beta2.powi(t as i32);

    for (name, tensor) in params {
        let numel = tensor.numel();
        let grad: Vec<f64> = tensor
            .grad()
            .ok_or_else(|| Error::Contract(format!("parameter {name} has no gradient buffer")))?
            .to_vec();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; numel]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; numel]);
        if m.len() != numel {
            return Err(Error::Contract(format!(
                "optimizer state for {name} has {} entries, parameter has {numel}",
                m.len()
            )));
        }
        let data = tensor.data_mut();
        for i in 0..numel {
            let g = grad[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
        tensor.zero_grad();
    }
    Ok(())
}
