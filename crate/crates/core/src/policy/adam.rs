use serde::{Deserialize, Serialize};

use super::{ParamBlocks, PolicyParams};
use crate::error::{usage_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: ParamBlocks,
    pub second_moment: ParamBlocks,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(params: &PolicyParams) -> Self {
        Self {
            first_moment: ParamBlocks::zeros(&params.layout),
            second_moment: ParamBlocks::zeros(&params.layout),
            step_count: 0,
        }
    }
}

/// One bias-corrected Adam step in the *ascent* direction of `grad`.
pub fn adam_update(
    params: &mut PolicyParams,
    state: &mut AdamState,
    grad: &ParamBlocks,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if !grad.same_shape(&params.weights) || !state.first_moment.same_shape(&params.weights) {
        return Err(usage_err("gradient shape does not match parameters"));
    }
    if !grad.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let params_b = params.weights.blocks_mut();
    let m_b = state.first_moment.blocks_mut();
    let v_b = state.second_moment.blocks_mut();
    for (((p, m), v), g) in params_b.into_iter().zip(m_b).zip(v_b).zip(grad.blocks()) {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] += lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
