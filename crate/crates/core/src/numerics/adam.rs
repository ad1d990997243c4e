use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::array::Array;
use super::math;
use super::params::ParamSet;
use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

/// Moment estimates for Adam, congruent with the parameters they update.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: ParamSet,
    pub second_moment: ParamSet,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Result<Self> {
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            bail!(Config, "Adam betas must lie in [0, 1)");
        }
        if !(config.epsilon > 0.0) || !(config.learning_rate > 0.0) {
            bail!(Config, "Adam epsilon and learning rate must be positive");
        }
        Ok(Self {
            step_count: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            config,
        })
    }
}

/// One bias-corrected Adam update. Inputs are left untouched.
pub fn adam_step(state: &AdamState, params: &ParamSet, grads: &ParamSet) -> Result<(AdamState, ParamSet)> {
    params.ensure_congruent(grads, "gradient")?;
    params.ensure_congruent(&state.first_moment, "Adam first moment")?;
    params.ensure_congruent(&state.second_moment, "Adam second moment")?;
    let AdamConfig { learning_rate, beta1, beta2, epsilon } = state.config;
    let t = state.step_count + 1;
    let c1 = 1.0 - math::powi(beta1, t);
    let c2 = 1.0 - math::powi(beta2, t);

    let n = params.len();
    let (mut ms, mut vs, mut ps) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (((p, g), m), v) in params
        .arrays()
        .zip(grads.arrays())
        .zip(state.first_moment.arrays())
        .zip(state.second_moment.arrays())
    {
        let len = p.len();
        let (mut m_new, mut v_new, mut p_new) = (Vec::with_capacity(len), Vec::with_capacity(len), Vec::with_capacity(len));
        for i in 0..len {
            let gi = g.data()[i];
            let mi = beta1 * m.data()[i] + (1.0 - beta1) * gi;
            let vi = beta2 * v.data()[i] + (1.0 - beta2) * gi * gi;
            let m_hat = mi / c1;
            let v_hat = vi / c2;
            m_new.push(mi);
            v_new.push(vi);
            p_new.push(p.data()[i] - learning_rate * m_hat / (math::sqrt(v_hat) + epsilon));
        }
        let shape = p.shape().to_vec();
        ms.push(Array::new(shape.clone(), m_new)?);
        vs.push(Array::new(shape.clone(), v_new)?);
        ps.push(Array::new(shape, p_new)?);
    }
    let next = AdamState {
        step_count: t,
        first_moment: state.first_moment.with_arrays(ms)?,
        second_moment: state.second_moment.with_arrays(vs)?,
        config: state.config,
    };
    Ok((next, params.with_arrays(ps)?))
}
