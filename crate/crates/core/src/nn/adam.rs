use serde::{Deserialize, Serialize};

use super::{Gradients, Layer, ModelParams};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecaySchedule {
    /// Multiply by `decay_factor` once `epoch > decay_after_epoch`.
    Step,
    /// Multiply by `decay_factor` for every epoch past `decay_after_epoch`.
    Geometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_after_epoch: usize,
    pub schedule: DecaySchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_adam: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.005,
            decay_factor: 0.1,
            decay_after_epoch: 25,
            schedule: DecaySchedule::Step,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_adam: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("optimizer.learning_rate must be > 0".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config("optimizer.decay_factor must be in (0, 1]".into()));
        }
        if self.decay_after_epoch == 0 {
            return Err(Error::Config("optimizer.decay_after_epoch must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("optimizer betas must be in [0, 1)".into()));
        }
        if !(self.epsilon_adam > 0.0) {
            return Err(Error::Config("optimizer.epsilon_adam must be > 0".into()));
        }
        Ok(())
    }

    /// Step size in force during `epoch` (1-based).
    pub fn effective_lr(&self, epoch: usize) -> f64 {
        if epoch <= self.decay_after_epoch {
            return self.learning_rate;
        }
        match self.schedule {
            DecaySchedule::Step => self.learning_rate * self.decay_factor,
            DecaySchedule::Geometric => {
                let k = (epoch - self.decay_after_epoch) as i32;
                self.learning_rate * self.decay_factor.powi(k)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: Vec<Layer>,
    pub second: Vec<Layer>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros_for(layers: &[Layer]) -> Self {
        let z: Vec<Layer> = layers
            .iter()
            .map(|l| Layer::zeros(l.out_dim(), l.in_dim()))
            .collect();
        AdamState {
            first: z.clone(),
            second: z,
            step: 0,
        }
    }
}

fn update(p: &mut f64, m: &mut f64, v: &mut f64, g: f64, lr: f64, c: &Coeffs) {
    *m = c.b1 * *m + (1.0 - c.b1) * g;
    *v = c.b2 * *v + (1.0 - c.b2) * g * g;
    let m_hat = *m / c.bc1;
    let v_hat = *v / c.bc2;
    *p -= lr * m_hat / (v_hat.sqrt() + c.eps);
}

struct Coeffs {
    b1: f64,
    b2: f64,
    bc1: f64,
    bc2: f64,
    eps: f64,
}

/// One Adam update with bias correction. `epoch` is 1-based and selects the
/// step size through the decay schedule.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    config: &OptimizerConfig,
    epoch: usize,
) -> Result<()> {
    if grads.len() != params.layers.len() {
        return Err(Error::Contract(format!(
            "{} gradient layers for {} parameter layers",
            grads.len(),
            params.layers.len()
        )));
    }
    for (i, (g, l)) in grads.iter().zip(&params.layers).enumerate() {
        if g.weight.dim() != l.weight.dim() || g.bias.dim() != l.bias.dim() {
            return Err(Error::Contract(format!("gradient layer {i} has wrong shape")));
        }
        if g.weight.iter().chain(g.bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite gradient in layer {i}")));
        }
    }
    let state = &mut params.adam;
    state.step += 1;
    let t = state.step as i32;
    let c = Coeffs {
        b1: config.beta1,
        b2: config.beta2,
        bc1: 1.0 - config.beta1.powi(t),
        bc2: 1.0 - config.beta2.powi(t),
        eps: config.epsilon_adam,
    };
    let lr = config.effective_lr(epoch);
    for (((layer, g), m), v) in params
        .layers
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        ndarray::Zip::from(&mut layer.weight)
            .and(&mut m.weight)
            .and(&mut v.weight)
            .and(&g.weight)
            .for_each(|p, m, v, &g| update(p, m, v, g, lr, &c));
        ndarray::Zip::from(&mut layer.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .and(&g.bias)
            .for_each(|p, m, v, &g| update(p, m, v, g, lr, &c));
    }
    Ok(())
}
