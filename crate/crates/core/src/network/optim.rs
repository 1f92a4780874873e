use serde::{Deserialize, Serialize};

use super::LayerState;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// Velocity coefficient of the SGD optimizer.
    pub momentum_alpha: f64,
    /// Smoothing factor of the gradient EMA that drives regrowth.
    pub ema_alpha: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum_alpha: 0.9,
            ema_alpha: 0.9,
            weight_decay: 5e-4,
            nesterov: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        for (name, a) in [("momentum_alpha", self.momentum_alpha), ("ema_alpha", self.ema_alpha)] {
            if !(0.0..1.0).contains(&a) {
                return Err(Error::Config(format!("{name} {a} outside [0, 1)")));
            }
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!("weight decay {} must be >= 0", self.weight_decay)));
        }
        Ok(())
    }
}

/// `M ← α·M + (1−α)·grad` at every position, masked or not.
pub fn momentum_update(state: &mut LayerState, grad: &Tensor, cfg: &OptimizerConfig) -> Result<()> {
    grad.expect_shape(&state.momentum, "momentum update")?;
    let a = cfg.ema_alpha;
    let b = 1.0 - a;
    for (m, &g) in state.momentum.data_mut().iter_mut().zip(grad.data()) {
        *m = (a * *m as f64 + b * g as f64) as f32;
    }
    Ok(())
}

/// Weights ← weights ⊙ mask. The optimizer velocity is masked as well so a
/// regrown position starts from rest.
pub fn apply_mask(state: &mut LayerState) {
    for ((w, v), &m) in state
        .weights
        .data_mut()
        .iter_mut()
        .zip(state.velocity.data_mut())
        .zip(state.mask.data())
    {
        *w *= m;
        *v *= m;
    }
}

/// One SGD step followed by [`apply_mask`].
pub fn sgd_step(
    state: &mut LayerState,
    weight_grad: &Tensor,
    bias_grad: &Tensor,
    cfg: &OptimizerConfig,
) -> Result<()> {
    dense_sgd_step(state, weight_grad, bias_grad, cfg)?;
    apply_mask(state);
    Ok(())
}

/// SGD step that ignores the mask; used for unmasked dense baselines.
///
/// `v ← α·v − lr·(g + wd·w)`, then `w ← w + α·v − lr·(g + wd·w)` with
/// Nesterov or `w ← w + v` without.
pub fn dense_sgd_step(
    state: &mut LayerState,
    weight_grad: &Tensor,
    bias_grad: &Tensor,
    cfg: &OptimizerConfig,
) -> Result<()> {
    weight_grad.expect_shape(&state.weights, "sgd weight gradient")?;
    bias_grad.expect_shape(&state.bias, "sgd bias gradient")?;
    step(state.weights.data_mut(), state.velocity.data_mut(), weight_grad.data(), cfg);
    step(state.bias.data_mut(), state.bias_velocity.data_mut(), bias_grad.data(), cfg);
    Ok(())
}

fn step(params: &mut [f32], velocity: &mut [f32], grad: &[f32], cfg: &OptimizerConfig) {
    let lr = cfg.learning_rate as f32;
    let alpha = cfg.momentum_alpha as f32;
    let wd = cfg.weight_decay as f32;
    for ((w, v), &g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        let d = g + wd * *w;
        *v = alpha * *v - lr * d;
        if cfg.nesterov {
            *w += alpha * *v - lr * d;
        } else {
            *w += *v;
        }
    }
}
