//! Controlled ODE environments, fixed-step RK4 integration and episode rollouts.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policies::Policy;
use crate::rng::SeedTree;
use crate::sampling;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemId {
    Navigation2d,
    InvertedPendulum,
    Vanderpol,
    /// `x' = -x + u`; closed-form test system, not exposed on the CLI.
    LinearDecay,
}

impl SystemId {
    pub const CLI_IDS: [SystemId; 3] = [
        SystemId::Navigation2d,
        SystemId::InvertedPendulum,
        SystemId::Vanderpol,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SystemId::Navigation2d => "navigation2d",
            SystemId::InvertedPendulum => "inverted_pendulum",
            SystemId::Vanderpol => "vanderpol",
            SystemId::LinearDecay => "linear_decay",
        }
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SystemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "navigation2d" => Ok(SystemId::Navigation2d),
            "inverted_pendulum" => Ok(SystemId::InvertedPendulum),
            "vanderpol" => Ok(SystemId::Vanderpol),
            other => Err(Error::Config(format!(
                "unknown environment `{other}` (expected navigation2d, inverted_pendulum or vanderpol)"
            ))),
        }
    }
}

// navigation2d geometry: start on the right, goal on the left, two wall blocks leave a gap.
pub const NAV_START: [f64; 2] = [4.0, 1.5];
pub const NAV_GOAL: [f64; 2] = [-4.0, -1.5];
pub const NAV_SPEED: f64 = 1.0;
pub const NAV_GOAL_RADIUS: f64 = 0.3;
pub const NAV_GOAL_BONUS: f64 = 50.0;
pub const NAV_ARENA: f64 = 6.0;
/// Reaching the goal without touching a wall scores well above this.
pub const NAV_SOLVED_REWARD: f64 = 10.0;
/// Wall rectangles as `[x_min, y_min, x_max, y_max]`.
pub const NAV_WALLS: [[f64; 4]; 2] = [[-0.5, 0.6, 0.5, 4.0], [-0.5, -4.0, 0.5, -0.6]];

// Cart-pole. State is `[cart x, pole angle, cart velocity, pole angular velocity]`.
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
pub const POLE_HALF_LENGTH: f64 = 0.5;
pub const GRAVITY: f64 = 9.8;
/// Force in newtons applied for a unit action.
pub const FORCE_SCALE: f64 = 20.0;
pub const POLE_ANGLE_LIMIT: f64 = 0.2;

pub const VDP_DAMPING: f64 = 1.0;
pub const VDP_STATE_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub id: SystemId,
    pub state_dim: usize,
    pub action_dim: usize,
    pub dt: f64,
    pub horizon: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub x0: Vec<f64>,
    pub start_radius: f64,
}

impl SystemSpec {
    pub fn builtin(id: SystemId) -> Self {
        match id {
            SystemId::Navigation2d => SystemSpec {
                id,
                state_dim: 2,
                action_dim: 2,
                dt: 0.05,
                horizon: 240,
                action_low: vec![-1.0; 2],
                action_high: vec![1.0; 2],
                x0: NAV_START.to_vec(),
                start_radius: 0.1,
            },
            SystemId::InvertedPendulum => SystemSpec {
                id,
                state_dim: 4,
                action_dim: 1,
                dt: 0.01,
                horizon: 1000,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                x0: vec![0.0; 4],
                start_radius: 0.1,
            },
            SystemId::Vanderpol => SystemSpec {
                id,
                state_dim: 2,
                action_dim: 1,
                dt: 0.01,
                horizon: 500,
                action_low: vec![-5.0],
                action_high: vec![5.0],
                x0: vec![1.0, 0.0],
                start_radius: 0.1,
            },
            SystemId::LinearDecay => SystemSpec::linear_decay(1, 0.1, 10),
        }
    }

    pub fn linear_decay(dim: usize, dt: f64, horizon: usize) -> Self {
        SystemSpec {
            id: SystemId::LinearDecay,
            state_dim: dim,
            action_dim: dim,
            dt,
            horizon,
            action_low: vec![-1.0; dim],
            action_high: vec![1.0; dim],
            x0: vec![1.0; dim],
            start_radius: 0.1,
        }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_start(mut self, x0: Vec<f64>, radius: f64) -> Self {
        self.x0 = x0;
        self.start_radius = radius;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Validation(format!("dt must be positive, got {}", self.dt)));
        }
        if self.horizon == 0 || self.state_dim == 0 || self.action_dim == 0 {
            return Err(Error::Validation(
                "horizon, state_dim and action_dim must be at least 1".into(),
            ));
        }
        if self.action_low.len() != self.action_dim || self.action_high.len() != self.action_dim {
            return Err(Error::shape(self.action_dim, self.action_low.len()));
        }
        if self
            .action_low
            .iter()
            .zip(&self.action_high)
            .any(|(lo, hi)| !(lo < hi))
        {
            return Err(Error::Validation("action bounds need low < high".into()));
        }
        if self.x0.len() != self.state_dim {
            return Err(Error::shape(self.state_dim, self.x0.len()));
        }
        if !(self.start_radius >= 0.0) {
            return Err(Error::Validation("start radius must be nonnegative".into()));
        }
        Ok(())
    }

    /// Reward at which a run on this system counts as solved.
    pub fn solved_threshold(&self) -> f64 {
        match self.id {
            SystemId::Navigation2d => NAV_SOLVED_REWARD,
            _ => self.horizon as f64,
        }
    }

    /// Euclidean diameter of the action box.
    pub fn action_diameter(&self) -> f64 {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(lo, hi)| (hi - lo) * (hi - lo))
            .sum::<f64>()
            .sqrt()
    }

    pub fn clamp_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (lo, hi))| if a.is_nan() { *a } else { a.clamp(*lo, *hi) })
            .collect()
    }

    pub fn vector_field(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        match self.id {
            SystemId::Navigation2d => {
                dx[0] = NAV_SPEED * u[0];
                dx[1] = NAV_SPEED * u[1];
            }
            SystemId::InvertedPendulum => {
                let (theta, xdot, thetadot) = (x[1], x[2], x[3]);
                let total = CART_MASS + POLE_MASS;
                let (s, c) = theta.sin_cos();
                let force = FORCE_SCALE * u[0];
                let temp = (force + POLE_MASS * POLE_HALF_LENGTH * thetadot * thetadot * s) / total;
                let theta_acc = (GRAVITY * s - c * temp)
                    / (POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * c * c / total));
                let x_acc = temp - POLE_MASS * POLE_HALF_LENGTH * theta_acc * c / total;
                dx[0] = xdot;
                dx[1] = thetadot;
                dx[2] = x_acc;
                dx[3] = theta_acc;
            }
            SystemId::Vanderpol => {
                dx[0] = x[1];
                dx[1] = VDP_DAMPING * (1.0 - x[0] * x[0]) * x[1] - x[0] + u[0];
            }
            SystemId::LinearDecay => {
                for i in 0..x.len() {
                    dx[i] = -x[i] + u[i];
                }
            }
        }
    }

    /// Safety predicate. Thresholds use strict inequalities.
    pub fn failure(&self, state: &[f64]) -> bool {
        match self.id {
            SystemId::Navigation2d => {
                let (px, py) = (state[0], state[1]);
                px.abs() > NAV_ARENA
                    || py.abs() > NAV_ARENA
                    || NAV_WALLS
                        .iter()
                        .any(|w| px > w[0] && px < w[2] && py > w[1] && py < w[3])
            }
            SystemId::InvertedPendulum => state[1].abs() > POLE_ANGLE_LIMIT,
            SystemId::Vanderpol => state.iter().any(|v| v.abs() > VDP_STATE_LIMIT),
            SystemId::LinearDecay => false,
        }
    }

    /// Reward for the transition that landed in `next` (which did not fail).
    pub fn step_reward(&self, next: &[f64]) -> f64 {
        match self.id {
            SystemId::Navigation2d => -self.dt * sampling::distance(next, &NAV_GOAL),
            _ => 1.0,
        }
    }

    /// Bonus added once when an episode runs to the full horizon.
    pub fn terminal_bonus(&self, last: &[f64]) -> f64 {
        match self.id {
            SystemId::Navigation2d if sampling::distance(last, &NAV_GOAL) < NAV_GOAL_RADIUS => {
                NAV_GOAL_BONUS
            }
            _ => 0.0,
        }
    }

    pub fn sample_start<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        sampling::in_ball(&self.x0, self.start_radius, rng)
    }
}

fn rk4(system: &SystemSpec, x: &[f64], u: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h = system.dt;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    system.vector_field(x, u, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    system.vector_field(&tmp, u, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    system.vector_field(&tmp, u, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    system.vector_field(&tmp, u, &mut k4);
    (0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Advances `state` by one `dt` with the action clamped to the system bounds.
pub fn step(system: &SystemSpec, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
    step_at(system, state, action, 0)
}

pub(crate) fn step_at(
    system: &SystemSpec,
    state: &[f64],
    action: &[f64],
    index: usize,
) -> Result<Vec<f64>> {
    if state.len() != system.state_dim {
        return Err(Error::shape(system.state_dim, state.len()));
    }
    if action.len() != system.action_dim {
        return Err(Error::shape(system.action_dim, action.len()));
    }
    let u = system.clamp_action(action);
    let next = rk4(system, state, &u);
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::IntegrationDiverged { step: index })
    }
}

/// State after `steps` closed-loop steps under `policy`, ignoring the failure predicate.
pub fn flow(
    system: &SystemSpec,
    x: &[f64],
    policy: &dyn Policy,
    steps: usize,
) -> Result<Vec<f64>> {
    if steps > system.horizon {
        return Err(Error::Config(format!(
            "flow of {steps} steps exceeds horizon {}",
            system.horizon
        )));
    }
    let mut state = x.to_vec();
    for k in 0..steps {
        let action = policy.act(&state)?;
        state = step_at(system, &state, &action, k)?;
    }
    Ok(state)
}

/// Every state visited by the closed loop from `x`, `horizon + 1` entries.
pub fn flow_trace(system: &SystemSpec, x: &[f64], policy: &dyn Policy) -> Result<Vec<Vec<f64>>> {
    let mut states = Vec::with_capacity(system.horizon + 1);
    states.push(x.to_vec());
    for k in 0..system.horizon {
        let action = policy.act(&states[k])?;
        let next = step_at(system, &states[k], &action, k)?;
        states.push(next);
    }
    Ok(states)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub episode_reward: f64,
    /// True when the episode ended early on the failure predicate.
    pub failed: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory holds at least one state")
    }

    /// Writes `t,s0..s{n-1},a0..a{m-1}`; the final row has empty action cells.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.actions.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("s{i}")));
        header.extend((0..m).map(|i| format!("a{i}")));
        w.write_record(&header)?;
        for (k, state) in self.states.iter().enumerate() {
            let mut row = vec![self.times[k].to_string()];
            row.extend(state.iter().map(f64::to_string));
            match self.actions.get(k) {
                Some(a) => row.extend(a.iter().map(f64::to_string)),
                None => row.extend(std::iter::repeat_n(String::new(), m)),
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One episode under `policy`. Starts at `x0`, or at a seeded uniform draw from the
/// start ball when `x0` is `None`. Terminates early only on the failure predicate.
pub fn rollout(
    system: &SystemSpec,
    policy: &dyn Policy,
    x0: Option<&[f64]>,
    rng_seed: u64,
) -> Result<Trajectory> {
    let start = match x0 {
        Some(x) => x.to_vec(),
        None => system.sample_start(&mut SeedTree::new(rng_seed).stream("rollout-start")),
    };
    rollout_from(system, policy, start)
}

/// Number of `n` seeded episodes from the start ball that reach the solved threshold.
pub fn solved_rollouts(
    system: &SystemSpec,
    policy: &dyn Policy,
    n: usize,
    seed: u64,
) -> Result<usize> {
    let tree = SeedTree::new(seed);
    let mut solved = 0;
    for i in 0..n {
        let traj = rollout(system, policy, None, tree.child("competence", i as u64).master())?;
        if !traj.failed && traj.episode_reward >= system.solved_threshold() {
            solved += 1;
        }
    }
    Ok(solved)
}

pub(crate) fn rollout_from(
    system: &SystemSpec,
    policy: &dyn Policy,
    start: Vec<f64>,
) -> Result<Trajectory> {
    if start.len() != system.state_dim {
        return Err(Error::shape(system.state_dim, start.len()));
    }
    let mut states = vec![start];
    let mut actions = Vec::with_capacity(system.horizon);
    let mut reward = 0.0;
    let mut failed = false;
    for k in 0..system.horizon {
        let action = system.clamp_action(&policy.act(&states[k])?);
        let next = step_at(system, &states[k], &action, k)?;
        actions.push(action);
        if system.failure(&next) {
            states.push(next);
            failed = true;
            break;
        }
        reward += system.step_reward(&next);
        states.push(next);
    }
    if !failed {
        reward += system.terminal_bonus(states.last().unwrap());
    }
    let times = (0..states.len()).map(|k| k as f64 * system.dt).collect();
    Ok(Trajectory {
        states,
        actions,
        times,
        episode_reward: reward,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::ConstantPolicy;

    #[test]
    fn vanderpol_origin_is_fixed() {
        let sys = SystemSpec::builtin(SystemId::Vanderpol);
        let next = step(&sys, &[0.0, 0.0], &[0.0]).unwrap();
        assert_eq!(next, vec![0.0, 0.0]);
    }

    #[test]
    fn rk4_matches_exponential() {
        let sys = SystemSpec::linear_decay(1, 0.1, 10);
        let next = step(&sys, &[1.0], &[0.0]).unwrap();
        assert!((next[0] - (-0.1f64).exp()).abs() < 1e-7);
        assert!((next[0] - 0.904_837_4).abs() < 1e-7);
    }

    #[test]
    fn navigation_moves_left_by_speed_dt() {
        let sys = SystemSpec::builtin(SystemId::Navigation2d);
        let next = step(&sys, &[2.0, 0.0], &[-1.0, 0.0]).unwrap();
        assert!((next[0] - (2.0 - sys.dt * NAV_SPEED)).abs() < 1e-12);
        assert!(next[1].abs() < 1e-15);
    }

    #[test]
    fn out_of_bounds_actions_are_clamped() {
        let sys = SystemSpec::builtin(SystemId::Navigation2d);
        let a = step(&sys, &[2.0, 0.0], &[-7.0, 3.0]).unwrap();
        let b = step(&sys, &[2.0, 0.0], &[-1.0, 1.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn failure_predicates() {
        let nav = SystemSpec::builtin(SystemId::Navigation2d);
        assert!(nav.failure(&[0.0, 1.0]));
        assert!(!nav.failure(&[0.0, 0.0]));
        let pend = SystemSpec::builtin(SystemId::InvertedPendulum);
        assert!(!pend.failure(&[0.0; 4]));
        assert!(!pend.failure(&[0.0, POLE_ANGLE_LIMIT, 0.0, 0.0]));
        assert!(pend.failure(&[0.0, -POLE_ANGLE_LIMIT - 1e-12, 0.0, 0.0]));
    }

    #[test]
    fn horizon_one_bookkeeping() {
        let sys = SystemSpec::builtin(SystemId::Vanderpol).with_horizon(1);
        let traj = rollout(&sys, &ConstantPolicy::zeros(1), None, 5).unwrap();
        assert_eq!(traj.states.len(), 2);
        assert_eq!(traj.actions.len(), 1);
        assert_eq!(traj.times.len(), 2);
    }

    #[test]
    fn flow_rejects_beyond_horizon() {
        let sys = SystemSpec::linear_decay(1, 0.1, 3);
        let p = ConstantPolicy::zeros(1);
        assert!(matches!(flow(&sys, &[1.0], &p, 4), Err(Error::Config(_))));
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let sys = SystemSpec::builtin(SystemId::Vanderpol);
        let err = step_at(&sys, &[1e200, 1e200], &[0.0], 7).unwrap_err();
        assert!(matches!(err, Error::IntegrationDiverged { step: 7 }));
    }

    #[test]
    fn unknown_env_id_is_rejected() {
        assert!("cartpole".parse::<SystemId>().is_err());
        assert_eq!("vanderpol".parse::<SystemId>().unwrap(), SystemId::Vanderpol);
    }
}
