use serde::{Deserialize, Serialize};

use super::{Gradients, ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, one pair per parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = || -> Vec<Tensor> {
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect()
        };
        OptimizerState {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: usize) -> &Tensor {
        &self.first[id]
    }

    pub fn second_moment(&self, id: usize) -> &Tensor {
        &self.second[id]
    }
}

const FLUSH: f64 = 1e-150;

/// One bias-corrected Adam update. Rejects non-finite gradients before
/// touching any parameter.
pub fn adam_step(params: &mut ParamSet, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                state.first.len()
            ),
        ));
    }
    for id in 0..params.len() {
        let g = grads.by_id(id);
        if g.shape() != params.by_id(id).shape() || g.shape() != state.first[id].shape() {
            return Err(Error::shape(
                "adam_step",
                format!("`{}`: grad {:?}", params.names()[id], g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of `{}`", params.names()[id])));
        }
    }

    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for id in 0..params.len() {
        let g = grads.by_id(id).data();
        let m = state.first[id].data_mut();
        for (mv, gv) in m.iter_mut().zip(g) {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            // moments of parameters whose gradient went to zero decay into
            // subnormals, which are very slow on most CPUs
            if mv.abs() < FLUSH {
                *mv = 0.0;
            }
        }
        let v = state.second[id].data_mut();
        for (vv, gv) in v.iter_mut().zip(g) {
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            if *vv < FLUSH * FLUSH {
                *vv = 0.0;
            }
        }
        let m = state.first[id].data();
        let v = state.second[id].data();
        for ((p, mv), vv) in params.by_id_mut(id).data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mv / bc1;
            let v_hat = vv / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
