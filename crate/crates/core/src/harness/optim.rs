use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// `base_lr · ½(1 + cos(π·step/total_steps))`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn with_decay(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// First and second moment estimates of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
        }
    }
}

/// One AdamW step: decay `param ← param·(1 − lr·wd)`, then the
/// bias-corrected Adam update.
pub fn adamw_update(param: &mut Tensor, grad: &Tensor, state: &mut AdamState, lr: f64, cfg: &AdamWConfig) {
    debug_assert_eq!(param.shape(), grad.shape());
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let decay = 1.0 - lr * cfg.weight_decay;
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (i, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        *p = *p * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// AdamW over every parameter of a store.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub states: Vec<AdamState>,
}

impl AdamW {
    pub fn new(store: &ParamStore, config: AdamWConfig) -> Self {
        Self {
            config,
            states: store.ids().map(|id| AdamState::new(store.get(id).shape())).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != self.states.len() || store.len() != self.states.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, got {} gradients for {}",
                self.states.len(),
                grads.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        for ((id, grad), state) in ids.into_iter().zip(grads).zip(&mut self.states) {
            let param = store.get_mut(id);
            if param.shape() != grad.shape() {
                return Err(Error::Shape {
                    op: "adamw",
                    left: param.shape().to_vec(),
                    right: grad.shape().to_vec(),
                });
            }
            adamw_update(param, grad, state, lr, &self.config);
        }
        Ok(())
    }
}
