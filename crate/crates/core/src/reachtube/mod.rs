//! Stochastic reach-tubes around closed-loop expert behavior.
//!
//! A tube is a sequence of bounding ellipsoids, one per environment step, fit to traces
//! started on the surface of the initial ball. Sampling continues in batches until the
//! stochastic caps derived from local Lipschitz estimates cover at least `1 - gamma` of
//! that sphere at every step.

mod build;
mod coverage;
mod io;
mod lipschitz;
mod slice;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::SystemId;
use crate::error::{Error, Result};
use crate::sampling;

pub use build::{build_tube, build_tube_for, BuildReport, TubeBuild};
pub use coverage::{surface_coverage, Cap, SphereCaps, MIN_COVERAGE_SAMPLES};
pub use io::{deserialize_tube, read_tube, serialize_tube, write_tube};
pub use lipschitz::{cap_radius, estimate_local_lipschitz, perturbation_distance, SampleSet};
pub use slice::{fit_slice, TubeSlice, COVARIANCE_RIDGE, DEGENERATE_RADIUS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TubeSource {
    pub system: SystemId,
    /// Name of the policy the tube was built around.
    pub expert: String,
    pub seed: u64,
    /// Slices live in the concatenated state-action space.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub includes_action: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachTube {
    pub gamma: f64,
    pub mu: f64,
    pub source: TubeSource,
    pub slices: Vec<TubeSlice>,
}

impl ReachTube {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// Number of steps covered, one less than the slice count.
    pub fn horizon(&self) -> usize {
        self.slices.len().saturating_sub(1)
    }

    pub fn dim(&self) -> usize {
        self.slices.first().map_or(0, TubeSlice::dim)
    }

    pub fn slice(&self, step: usize) -> Result<&TubeSlice> {
        self.slices.get(step).ok_or_else(|| {
            Error::Alignment(format!(
                "step {step} beyond tube horizon {}",
                self.horizon()
            ))
        })
    }

    /// Membership value of `state` in the slice aligned with `step`.
    pub fn membership(&self, step: usize, state: &[f64]) -> Result<f64> {
        self.slice(step)?.membership(state)
    }

    /// Every slice radius multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        ReachTube {
            slices: self.slices.iter().map(|s| s.scaled(factor)).collect(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Validation(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        if !(self.mu >= 1.0) || !self.mu.is_finite() {
            return Err(Error::Validation(format!("mu {} below 1", self.mu)));
        }
        let first = self
            .slices
            .first()
            .ok_or_else(|| Error::Validation("tube has no slices".into()))?;
        if first.tau != 0.0 {
            return Err(Error::Validation(format!("first slice at tau {}", first.tau)));
        }
        let dim = first.dim();
        for (k, s) in self.slices.iter().enumerate() {
            s.check()
                .map_err(|e| Error::Validation(format!("slice {k}: {e}")))?;
            if s.dim() != dim {
                return Err(Error::Validation(format!(
                    "slice {k} has dimension {}, expected {dim}",
                    s.dim()
                )));
            }
        }
        if self.slices.len() > 1 {
            let dt = self.slices[1].tau;
            for (k, pair) in self.slices.windows(2).enumerate() {
                let gap = pair[1].tau - pair[0].tau;
                if !(gap > 0.0) || (gap - dt).abs() > 1e-9 * dt.max(1.0) {
                    return Err(Error::Validation(format!(
                        "slice times are not uniformly increasing at step {}",
                        k + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TubeConfig {
    pub gamma: f64,
    pub mu: f64,
    pub initial_radius: f64,
    pub batch_size: usize,
    pub max_batches: usize,
    pub coverage_samples: usize,
    /// Build over state and expert action concatenated (experimental).
    pub include_action: bool,
}

impl Default for TubeConfig {
    fn default() -> Self {
        TubeConfig {
            gamma: 0.2,
            mu: 1.1,
            initial_radius: 0.1,
            batch_size: 512,
            max_batches: 8,
            coverage_samples: 10_000,
            include_action: false,
        }
    }
}

impl TubeConfig {
    pub fn validate(&self) -> Result<()> {
        let problem = if !(self.gamma > 0.0 && self.gamma < 1.0) {
            Some(format!("gamma must lie in (0, 1), got {}", self.gamma))
        } else if !(self.mu >= 1.0) || !self.mu.is_finite() {
            Some(format!("mu must be >= 1, got {}", self.mu))
        } else if !(self.initial_radius > 0.0) || !self.initial_radius.is_finite() {
            Some(format!("radius must be > 0, got {}", self.initial_radius))
        } else if self.batch_size < 2 {
            Some(format!("batch size must be >= 2, got {}", self.batch_size))
        } else if self.max_batches == 0 {
            Some("max_batches must be >= 1".to_string())
        } else if self.coverage_samples < MIN_COVERAGE_SAMPLES {
            Some(format!(
                "coverage_samples must be >= {MIN_COVERAGE_SAMPLES}, got {}",
                self.coverage_samples
            ))
        } else {
            None
        };
        match problem {
            Some(msg) => Err(Error::Config(msg)),
            None => Ok(()),
        }
    }
}

/// `n` points uniform on the sphere of `radius` around `x0`.
pub fn sample_initial_surface<R: Rng + ?Sized>(
    x0: &[f64],
    radius: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if !(radius > 0.0) || x0.is_empty() {
        return Err(Error::Config(format!(
            "surface sampling needs a positive radius and nonempty center, got radius {radius}"
        )));
    }
    Ok((0..n).map(|_| sampling::on_sphere(x0, radius, rng)).collect())
}
