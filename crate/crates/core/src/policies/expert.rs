//! Scripted experts standing in for trained RL controllers.

use serde::{Deserialize, Serialize};

use crate::envs::{SystemId, SystemSpec, NAV_GOAL, NAV_WALLS};
use crate::error::{Error, Result};
use crate::policies::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertKind {
    PdPendulum,
    PotentialFieldNav2d,
    LqrVanderpol,
    /// Zero control, for the linear test system.
    Passive,
}

impl ExpertKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExpertKind::PdPendulum => "pd_pendulum",
            ExpertKind::PotentialFieldNav2d => "potential_field_nav2d",
            ExpertKind::LqrVanderpol => "lqr_vanderpol",
            ExpertKind::Passive => "passive",
        }
    }
}

// LQR gains on the upright linearization (Q = diag(1, 10, 1, 1), R = 1).
const PENDULUM_GAINS: [f64; 4] = [1.0, 9.606_463_09, 1.688_343_17, 2.559_204_52];
// LQR gains on the origin linearization (Q = I, R = 1).
const VANDERPOL_GAINS: [f64; 2] = [0.414_213_56, 2.681_792_83];
// Attraction slow-down radius, repulsion strength, repulsion influence radius.
const NAV_GAINS: [f64; 3] = [0.5, 0.02, 0.35];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertPolicy {
    pub kind: ExpertKind,
    pub gains: Vec<f64>,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
}

impl ExpertPolicy {
    pub fn for_system(system: &SystemSpec) -> Self {
        let (kind, gains) = match system.id {
            SystemId::InvertedPendulum => (ExpertKind::PdPendulum, PENDULUM_GAINS.to_vec()),
            SystemId::Navigation2d => (ExpertKind::PotentialFieldNav2d, NAV_GAINS.to_vec()),
            SystemId::Vanderpol => (ExpertKind::LqrVanderpol, VANDERPOL_GAINS.to_vec()),
            SystemId::LinearDecay => (ExpertKind::Passive, Vec::new()),
        };
        ExpertPolicy {
            kind,
            gains,
            action_low: system.action_low.clone(),
            action_high: system.action_high.clone(),
        }
    }

    pub fn with_gains(mut self, gains: Vec<f64>) -> Result<Self> {
        if gains.len() != self.gains.len() || gains.iter().any(|g| !g.is_finite()) {
            return Err(Error::Validation(format!(
                "{} expects {} finite gains",
                self.kind.as_str(),
                self.gains.len()
            )));
        }
        self.gains = gains;
        Ok(self)
    }

    fn state_dim(&self) -> usize {
        match self.kind {
            ExpertKind::PdPendulum => 4,
            ExpertKind::PotentialFieldNav2d | ExpertKind::LqrVanderpol => 2,
            ExpertKind::Passive => self.action_low.len(),
        }
    }

    fn raw_action(&self, s: &[f64]) -> Vec<f64> {
        let g = &self.gains;
        match self.kind {
            ExpertKind::PdPendulum => {
                vec![g[0] * s[0] + g[1] * s[1] + g[2] * s[2] + g[3] * s[3]]
            }
            ExpertKind::LqrVanderpol => vec![-g[0] * s[0] - g[1] * s[1]],
            ExpertKind::PotentialFieldNav2d => potential_field(s, g[0], g[1], g[2]),
            ExpertKind::Passive => vec![0.0; self.action_low.len()],
        }
    }
}

fn potential_field(p: &[f64], slow_radius: f64, k_rep: f64, influence: f64) -> Vec<f64> {
    let to_goal = [NAV_GOAL[0] - p[0], NAV_GOAL[1] - p[1]];
    let dist = to_goal[0].hypot(to_goal[1]);
    let scale = 1.0 / dist.max(slow_radius);
    let mut u = [to_goal[0] * scale, to_goal[1] * scale];
    for w in &NAV_WALLS {
        let q = [p[0].clamp(w[0], w[2]), p[1].clamp(w[1], w[3])];
        let away = [p[0] - q[0], p[1] - q[1]];
        let d = away[0].hypot(away[1]);
        if d > 0.0 && d < influence {
            let push = k_rep * (1.0 / d - 1.0 / influence) / (d * d);
            u[0] += push * away[0] / d;
            u[1] += push * away[1] / d;
        }
    }
    let norm = u[0].hypot(u[1]);
    if norm > 1.0 {
        u[0] /= norm;
        u[1] /= norm;
    }
    u.to_vec()
}

impl Policy for ExpertPolicy {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim() {
            return Err(Error::shape(self.state_dim(), state.len()));
        }
        Ok(self
            .raw_action(state)
            .into_iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (lo, hi))| a.clamp(*lo, *hi))
            .collect())
    }
}
