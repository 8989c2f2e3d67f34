//! Policies: scripted experts, the MLP novice and doubt model, ensembles, and action noise.

mod expert;
mod mlp;
mod train;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use expert::{ExpertKind, ExpertPolicy};
pub use mlp::{
    bce_loss_and_grads, mse_loss_and_grads, Activation, MlpGrads, MlpPolicy, OutputHead,
};
pub use train::{fit, sgd_update, Loss, OptimizerConfig, Sgd};

/// A deterministic state-to-action map.
pub trait Policy: Sync {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>>;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        (**self).act(state)
    }
}

/// Outputs the same action everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantPolicy(pub Vec<f64>);

impl ConstantPolicy {
    pub fn zeros(action_dim: usize) -> Self {
        ConstantPolicy(vec![0.0; action_dim])
    }
}

impl Policy for ConstantPolicy {
    fn act(&self, _state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

/// Novice ensemble; acts with the member mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub members: Vec<MlpPolicy>,
}

impl Ensemble {
    pub fn new(members: Vec<MlpPolicy>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InsufficientEnsemble { got: members.len() });
        }
        Ok(Ensemble { members })
    }

    pub fn predictions(&self, state: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.members.iter().map(|m| m.forward(state)).collect()
    }
}

impl Policy for Ensemble {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        let preds = self.predictions(state)?;
        let k = preds.len() as f64;
        let mut mean = vec![0.0; preds[0].len()];
        for p in &preds {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / k;
            }
        }
        Ok(mean)
    }
}

/// A policy checkpoint as written by the training loops: one MLP or an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum SavedPolicy {
    Mlp(MlpPolicy),
    Ensemble(Ensemble),
}

impl SavedPolicy {
    pub fn from_json(text: &str) -> Result<Self> {
        match MlpPolicy::from_json(text) {
            Ok(p) => Ok(SavedPolicy::Mlp(p)),
            Err(mlp_err) => match serde_json::from_str::<Ensemble>(text) {
                Ok(e) => Ok(SavedPolicy::Ensemble(Ensemble::new(e.members)?)),
                Err(_) => Err(mlp_err),
            },
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Policy for SavedPolicy {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        match self {
            SavedPolicy::Mlp(p) => p.act(state),
            SavedPolicy::Ensemble(e) => e.act(state),
        }
    }
}

/// Isotropic Gaussian action noise with variance `sigma2` per dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    sigma2: f64,
}

impl NoiseConfig {
    pub fn new(sigma2: f64) -> Result<Self> {
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(Error::Config(format!("noise variance must be >= 0, got {sigma2}")));
        }
        Ok(NoiseConfig { sigma2 })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

pub fn noisy_action<R: Rng + ?Sized>(action: &[f64], noise: &NoiseConfig, rng: &mut R) -> Vec<f64> {
    if noise.sigma2 == 0.0 {
        return action.to_vec();
    }
    let normal = Normal::new(0.0, noise.sigma2.sqrt()).expect("finite nonnegative std");
    action.iter().map(|a| a + normal.sample(rng)).collect()
}
