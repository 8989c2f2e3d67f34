//! Minibatch SGD with momentum.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policies::mlp::{MlpGrads, MlpPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// Upper bound on minibatch steps per call, so updates on a growing dataset keep a
    /// fixed cost. `None` runs every epoch in full.
    pub max_steps: Option<usize>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-2,
            momentum: 0.9,
            epochs: 100,
            minibatch: 16,
            max_steps: Some(6400),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) || self.minibatch == 0 {
            return Err(Error::Config(format!(
                "invalid optimizer settings: lr={}, momentum={}, minibatch={}",
                self.lr, self.momentum, self.minibatch
            )));
        }
        Ok(())
    }
}

/// One plain gradient step: `theta - lr * grad`.
pub fn sgd_update(policy: &MlpPolicy, grads: &MlpGrads, lr: f64) -> MlpPolicy {
    let mut next = policy.clone();
    for (p, g) in next.params_mut().zip(grads.values()) {
        *p -= lr * g;
    }
    next
}

/// Heavy-ball momentum state for one training call.
#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(policy: &MlpPolicy, lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: vec![0.0; policy.num_params()],
        }
    }

    pub fn step(&mut self, policy: &mut MlpPolicy, grads: &MlpGrads) {
        for ((p, g), v) in policy
            .params_mut()
            .zip(grads.values())
            .zip(self.velocity.iter_mut())
        {
            *v = self.momentum * *v + g;
            *p -= self.lr * *v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    Mse,
    Bce,
}

/// Trains a copy of `policy` and returns it with the mean loss of the final (possibly
/// partial) epoch.
///
/// Minibatch order is drawn from `rng`, so identical inputs and rng state give identical
/// parameters.
pub fn fit<R: Rng + ?Sized>(
    policy: &MlpPolicy,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    loss: Loss,
    cfg: &OptimizerConfig,
    rng: &mut R,
) -> Result<(MlpPolicy, f64)> {
    cfg.validate()?;
    match loss {
        Loss::Mse => policy.check_mse_batch(inputs, targets)?,
        Loss::Bce => policy.check_bce_batch(inputs, targets)?,
    }
    let mut model = policy.clone();
    let mut opt = Sgd::new(&model, cfg.lr, cfg.momentum);
    let mut grads = MlpGrads::zeros_like(&model);
    let mut cache = model.cache();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut last_loss = f64::NAN;
    let mut budget = cfg.max_steps.unwrap_or(usize::MAX);

    for _ in 0..cfg.epochs {
        if budget == 0 {
            break;
        }
        order.shuffle(rng);
        let (mut total, mut seen) = (0.0, 0);
        for rows in order.chunks(cfg.minibatch).take(budget) {
            let batch_loss = match loss {
                Loss::Mse => model.mse_into(inputs, targets, rows, &mut cache, &mut grads),
                Loss::Bce => model.bce_into(inputs, targets, rows, &mut cache, &mut grads),
            };
            total += batch_loss * rows.len() as f64;
            seen += rows.len();
            budget -= 1;
            opt.step(&mut model, &grads);
        }
        last_loss = total / seen as f64;
    }
    if model.params_mut().any(|p| !p.is_finite()) {
        return Err(Error::Validation(
            "training produced non-finite parameters".into(),
        ));
    }
    Ok((model, last_loss))
}
