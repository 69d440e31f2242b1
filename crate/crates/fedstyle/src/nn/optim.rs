use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hyperparameters of momentum SGD with a multistep schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            weight_decay: 5e-4,
            momentum: 0.9,
            milestones: vec![20, 40],
            gamma: 0.1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "learning rate and weight decay must be non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "SGD momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.milestones.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("milestones must be sorted".into()));
        }
        Ok(())
    }
}

/// Learning rate in effect at a zero-based `epoch`.
pub fn lr_at_epoch(config: &OptimizerConfig, epoch: usize) -> f64 {
    let passed = config.milestones.iter().filter(|&&m| m <= epoch).count();
    config.base_lr * config.gamma.powi(passed as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub current_lr: f64,
    velocity: Vec<Tensor>,
}

impl OptimizerState {
    /// Zero velocity shaped like `params`.
    pub fn new<P: Parameters + ?Sized>(config: OptimizerConfig, params: &P) -> Self {
        let velocity = params
            .tensors()
            .into_iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        Self {
            current_lr: config.base_lr,
            config,
            velocity,
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    pub fn reset_velocity(&mut self) {
        for v in &mut self.velocity {
            v.values_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

/// Sets `current_lr` for `epoch`.
pub fn lr_schedule(state: &mut OptimizerState, epoch: usize) {
    state.current_lr = lr_at_epoch(&state.config, epoch);
}

/// One step of classic momentum SGD with coupled weight decay:
/// `v ← μv + (g + λθ)`, `θ ← θ − lr·v`.
pub fn sgd_step<P: Parameters + ?Sized>(params: &mut P, grads: &P, state: &mut OptimizerState) -> Result<()> {
    let grads = grads.tensors();
    let mut params = params.tensors_mut();
    if grads.len() != params.len() || state.velocity.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} parameter tensors, {} gradients, {} velocities",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for ((p, g), v) in params.iter().zip(&grads).zip(&state.velocity) {
        if !p.same_shape(g) || !p.same_shape(v) {
            return Err(Error::Shape(format!(
                "parameter {:?} vs gradient {:?} vs velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
    }
    let (mu, wd, lr) = (
        state.config.momentum,
        state.config.weight_decay,
        state.current_lr,
    );
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((theta, &gv), vel) in p
            .values_mut()
            .iter_mut()
            .zip(g.values())
            .zip(v.values_mut().iter_mut())
        {
            *vel = mu * *vel + gv + wd * *theta;
            *theta -= lr * *vel;
        }
    }
    Ok(())
}
