//! AdamW with decoupled weight decay.

use std::collections::BTreeMap;

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.raw_dim())))
                .collect::<BTreeMap<_, _>>()
        };
        AdamState { step: 0, m: zeros(), v: zeros() }
    }
}

/// One AdamW update at learning rate `lr`. Parameters without a gradient
/// entry are treated as having zero gradient. Gradients are checked for
/// finiteness before anything is modified.
pub fn optimizer_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    opt: &AdamW,
    lr: f64,
) -> Result<()> {
    if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteGradient { param: name.clone() });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    let decay = 1.0 - lr * opt.weight_decay;
    for (name, p) in params.iter_mut() {
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.raw_dim()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.raw_dim()));
        let zero;
        let g = match grads.get(name) {
            Some(g) => g,
            None => {
                zero = Tensor::zeros(p.raw_dim());
                &zero
            }
        };
        ndarray::Zip::from(&mut *p).and(&mut *m).and(&mut *v).and(g).for_each(|p, m, v, &gi| {
            *p *= decay;
            *m = opt.beta1 * *m + (1.0 - opt.beta1) * gi;
            *v = opt.beta2 * *v + (1.0 - opt.beta2) * gi * gi;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + opt.eps);
        });
    }
    Ok(())
}
