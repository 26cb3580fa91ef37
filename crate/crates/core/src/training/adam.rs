use crate::error::{Error, Result};
use crate::model::{ModelParams, Weights};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-7,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Step count and moment estimates, shaped like the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Weights,
    pub second: Weights,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            step: 0,
            first: params.weights().zeros_like(),
            second: params.weights().zeros_like(),
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Weights,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    let w = params.weights();
    if !w.shapes_match(grads) || !w.shapes_match(&state.first) || !w.shapes_match(&state.second) {
        return Err(Error::ShapeMismatch("gradient or optimiser state does not match parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    let (b1, b2, lr, eps) = (config.beta1, config.beta2, config.learning_rate, config.epsilon);

    let params_l = params.weights_mut().linears_mut();
    let grads_l = grads.linears();
    let first_l = state.first.linears_mut();
    let second_l = state.second.linears_mut();
    for (((p, g), m), v) in params_l.into_iter().zip(grads_l).zip(first_l).zip(second_l) {
        let pv = p.weight.iter_mut().chain(p.bias.iter_mut());
        let gv = g.weight.iter().chain(g.bias.iter());
        let mv = m.weight.iter_mut().chain(m.bias.iter_mut());
        let vv = v.weight.iter_mut().chain(v.bias.iter_mut());
        for (((p, &g), m), v) in pv.zip(gv).zip(mv).zip(vv) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
    Ok(())
}
