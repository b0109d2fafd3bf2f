use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::params::{ParamKind, ParamStore};

/// Adam hyperparameters. Only the learning rate varies in practice;
/// the moment decays and epsilon are the usual defaults.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter first/second moment estimates plus the shared step count.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    step_count: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> AdamState<T> {
    /// Registers every trainable parameter whose name starts with `prefix`.
    pub fn for_prefix(store: &ParamStore<T>, prefix: &str) -> Self {
        let mut moments = BTreeMap::new();
        for (name, tensor, kind) in store.iter() {
            if kind == ParamKind::Trainable && name.starts_with(prefix) {
                moments.insert(name.to_string(), (vec![T::zero(); tensor.numel()], vec![T::zero(); tensor.numel()]));
            }
        }
        AdamState { step_count: 0, moments }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn registered(&self) -> impl Iterator<Item = &str> {
        self.moments.keys().map(String::as_str)
    }

    pub fn moments(&self, name: &str) -> Option<(&[T], &[T])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step_count = step;
    }

    pub fn set_moments(&mut self, name: &str, m: Vec<T>, v: Vec<T>) -> Result<()> {
        let entry = self
            .moments
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("adam: unregistered parameter {name}")))?;
        if m.len() != entry.0.len() || v.len() != entry.1.len() {
            return Err(Error::contract(format!("adam: moment shape mismatch for {name}")));
        }
        *entry = (m, v);
        Ok(())
    }
}

/// One bias-corrected Adam update over all registered parameters.
///
/// Parameters absent from `grads` are treated as having a zero gradient.
/// Any non-finite gradient aborts the step before any state is touched,
/// naming the offending parameter.
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &BTreeMap<String, Vec<T>>,
    state: &mut AdamState<T>,
    hp: &AdamParams,
) -> Result<()> {
    for (name, g) in grads {
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite(format!("gradient of parameter {name}")));
        }
        if let Some((m, _)) = state.moments.get(name) {
            if m.len() != g.len() {
                return Err(Error::contract(format!(
                    "adam: gradient for {name} has {} values, parameter has {}",
                    g.len(),
                    m.len()
                )));
            }
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let b1 = T::cast(hp.beta1);
    let b2 = T::cast(hp.beta2);
    let lr = T::cast(hp.lr);
    let eps = T::cast(hp.eps);
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);

    let zero_grad: Vec<T> = Vec::new();
    for (name, (m, v)) in state.moments.iter_mut() {
        let g = grads.get(name).map(Vec::as_slice).unwrap_or(&zero_grad);
        let param = store.get_mut(name)?;
        let data = param.data_mut();
        for i in 0..data.len() {
            let gi = g.get(i).copied().unwrap_or(T::zero());
            m[i] = b1 * m[i] + (T::one() - b1) * gi;
            v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
