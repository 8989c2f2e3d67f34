//! Per-step intervention gates.
//!
//! All three gates share one hysteresis rule: the expert takes over when the signal
//! rises strictly above the high threshold and hands back once it drops strictly below
//! the low one. Ties keep the current regime.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policies::MlpPolicy;
use crate::sampling::distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Autonomous,
    Supervisor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Actor {
    Expert,
    Novice,
}

impl Actor {
    /// Control regime this actor represents, for switch counting.
    pub fn regime(self) -> Mode {
        match self {
            Actor::Expert => Mode::Supervisor,
            Actor::Novice => Mode::Autonomous,
        }
    }
}

/// Core hysteresis decision shared by every gate.
pub fn hysteresis(signal: f64, mode: Mode, low: f64, high: f64) -> (Actor, Mode) {
    if mode == Mode::Supervisor || signal > high {
        let next = if signal < low {
            Mode::Autonomous
        } else {
            Mode::Supervisor
        };
        (Actor::Expert, next)
    } else {
        (Actor::Novice, Mode::Autonomous)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTubeGate")]
pub struct TubeGateConfig {
    beta_minus: f64,
    beta_plus: f64,
}

#[derive(Deserialize)]
struct RawTubeGate {
    beta_minus: f64,
    beta_plus: f64,
}

impl TryFrom<RawTubeGate> for TubeGateConfig {
    type Error = Error;
    fn try_from(raw: RawTubeGate) -> Result<Self> {
        TubeGateConfig::from_pair(raw.beta_minus, raw.beta_plus)
    }
}

impl TubeGateConfig {
    /// Requires `0 <= beta_minus < beta_plus`.
    pub fn new(beta_minus: f64, beta_plus: f64) -> Result<Self> {
        if !(beta_minus >= 0.0) || !(beta_minus < beta_plus) || !beta_plus.is_finite() {
            return Err(Error::Config(format!(
                "tube thresholds need 0 <= beta_minus < beta_plus, got ({beta_minus}, {beta_plus})"
            )));
        }
        Ok(TubeGateConfig {
            beta_minus,
            beta_plus,
        })
    }

    /// `beta_minus = beta_plus = 0`: the expert acts on every step that leaves the
    /// tube center, which reduces the loop to behavioral cloning.
    pub fn always_expert() -> Self {
        TubeGateConfig {
            beta_minus: 0.0,
            beta_plus: 0.0,
        }
    }

    /// Like [`TubeGateConfig::new`], but also accepts the `(0, 0)` degenerate pair.
    pub fn from_pair(beta_minus: f64, beta_plus: f64) -> Result<Self> {
        if beta_minus == 0.0 && beta_plus == 0.0 {
            Ok(Self::always_expert())
        } else {
            Self::new(beta_minus, beta_plus)
        }
    }

    pub fn beta_minus(&self) -> f64 {
        self.beta_minus
    }

    pub fn beta_plus(&self) -> f64 {
        self.beta_plus
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDoubtGate")]
pub struct DoubtGateConfig {
    tau_low: f64,
    tau_high: f64,
    tau_m: f64,
}

#[derive(Deserialize)]
struct RawDoubtGate {
    tau_low: f64,
    tau_high: f64,
    tau_m: f64,
}

impl TryFrom<RawDoubtGate> for DoubtGateConfig {
    type Error = Error;
    fn try_from(raw: RawDoubtGate) -> Result<Self> {
        if raw.tau_low == raw.tau_high {
            DoubtGateConfig::single_threshold(raw.tau_high, raw.tau_m)
        } else {
            DoubtGateConfig::new(raw.tau_low, raw.tau_high, raw.tau_m)
        }
    }
}

impl DoubtGateConfig {
    /// Requires `tau_low < tau_high` and `tau_m > 0`.
    pub fn new(tau_low: f64, tau_high: f64, tau_m: f64) -> Result<Self> {
        if !(tau_low < tau_high) || !tau_low.is_finite() || !tau_high.is_finite() {
            return Err(Error::Config(format!(
                "doubt thresholds need tau_low < tau_high, got ({tau_low}, {tau_high})"
            )));
        }
        Self::checked(tau_low, tau_high, tau_m)
    }

    /// One threshold for both directions (SafeDAgger-style gating).
    pub fn single_threshold(tau: f64, tau_m: f64) -> Result<Self> {
        if !tau.is_finite() {
            return Err(Error::Config(format!("doubt threshold must be finite, got {tau}")));
        }
        Self::checked(tau, tau, tau_m)
    }

    fn checked(tau_low: f64, tau_high: f64, tau_m: f64) -> Result<Self> {
        if !(tau_m > 0.0) || !tau_m.is_finite() {
            return Err(Error::Config(format!("tau_m must be > 0, got {tau_m}")));
        }
        Ok(DoubtGateConfig {
            tau_low,
            tau_high,
            tau_m,
        })
    }

    pub fn tau_low(&self) -> f64 {
        self.tau_low
    }

    pub fn tau_high(&self) -> f64 {
        self.tau_high
    }

    pub fn tau_m(&self) -> f64 {
        self.tau_m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVarianceGate")]
pub struct VarianceGateConfig {
    tau_low: f64,
    tau_high: f64,
}

#[derive(Deserialize)]
struct RawVarianceGate {
    tau_low: f64,
    tau_high: f64,
}

impl TryFrom<RawVarianceGate> for VarianceGateConfig {
    type Error = Error;
    fn try_from(raw: RawVarianceGate) -> Result<Self> {
        VarianceGateConfig::new(raw.tau_low, raw.tau_high)
    }
}

impl VarianceGateConfig {
    /// Requires `0 <= tau_low < tau_high`.
    pub fn new(tau_low: f64, tau_high: f64) -> Result<Self> {
        if !(tau_low >= 0.0) || !(tau_low < tau_high) || !tau_high.is_finite() {
            return Err(Error::Config(format!(
                "variance thresholds need 0 <= tau_low < tau_high, got ({tau_low}, {tau_high})"
            )));
        }
        Ok(VarianceGateConfig { tau_low, tau_high })
    }

    pub fn tau_low(&self) -> f64 {
        self.tau_low
    }

    pub fn tau_high(&self) -> f64 {
        self.tau_high
    }
}

/// Gate on the tube membership value `rho`.
pub fn tube_gate(rho: f64, mode: Mode, cfg: &TubeGateConfig) -> (Actor, Mode) {
    hysteresis(rho, mode, cfg.beta_minus, cfg.beta_plus)
}

/// Gate on the doubt model's predicted probability that the expert is needed.
pub fn doubt_gate(doubt_prob: f64, mode: Mode, cfg: &DoubtGateConfig) -> (Actor, Mode) {
    hysteresis(doubt_prob, mode, cfg.tau_low, cfg.tau_high)
}

/// Gate on the ensemble disagreement.
pub fn variance_gate(variance: f64, mode: Mode, cfg: &VarianceGateConfig) -> (Actor, Mode) {
    hysteresis(variance, mode, cfg.tau_low, cfg.tau_high)
}

/// Mean over action dimensions of the population variance across members.
pub fn ensemble_variance(members: &[MlpPolicy], state: &[f64]) -> Result<f64> {
    if members.len() < 2 {
        return Err(Error::InsufficientEnsemble { got: members.len() });
    }
    let preds = members
        .iter()
        .map(|m| m.forward(state))
        .collect::<Result<Vec<_>>>()?;
    Ok(prediction_variance(&preds))
}

/// Population variance in the pairwise form `sum_ij (p_i - p_j)^2 / (2 k^2)`, which is
/// exactly zero when every member agrees.
pub(crate) fn prediction_variance(preds: &[Vec<f64>]) -> f64 {
    let k = preds.len() as f64;
    let dims = preds[0].len();
    let mut total = 0.0;
    for d in 0..dims {
        for (i, a) in preds.iter().enumerate() {
            for b in &preds[i + 1..] {
                total += (a[d] - b[d]).powi(2);
            }
        }
    }
    total / (k * k * dims as f64)
}

/// States with binary "expert needed" labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledSet {
    pub states: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Labels a state unsafe (1) when the novice action is at least `tau_m` from the expert
/// action, safe (0) otherwise.
pub fn make_doubt_labels(
    samples: &[(Vec<f64>, Vec<f64>, Vec<f64>)],
    tau_m: f64,
) -> Result<LabeledSet> {
    let mut out = LabeledSet::default();
    for (state, novice, expert) in samples {
        if novice.len() != expert.len() {
            return Err(Error::shape(expert.len(), novice.len()));
        }
        let unsafe_step = distance(novice, expert) >= tau_m;
        out.states.push(state.clone());
        out.labels.push(if unsafe_step { 1.0 } else { 0.0 });
    }
    Ok(out)
}

/// Number of regime changes in one episode's per-step regimes. Episodes start and end
/// autonomous, so an episode that finishes under supervision counts the hand-back.
pub fn count_switches(regimes: &[Mode]) -> usize {
    let mut prev = Mode::Autonomous;
    let mut switches = 0;
    for &m in regimes.iter().chain(std::iter::once(&Mode::Autonomous)) {
        if m != prev {
            switches += 1;
        }
        prev = m;
    }
    switches
}

/// Gate mode plus running counters for one training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateState {
    pub mode: Mode,
    pub context_switches: usize,
    pub expert_actions: usize,
    pub novice_actions: usize,
    pub(crate) regime: Mode,
}

impl Default for GateState {
    fn default() -> Self {
        GateState {
            mode: Mode::Autonomous,
            context_switches: 0,
            expert_actions: 0,
            novice_actions: 0,
            regime: Mode::Autonomous,
        }
    }
}

impl GateState {
    /// Records one gated step.
    pub fn record(&mut self, actor: Actor, next_mode: Mode) {
        match actor {
            Actor::Expert => self.expert_actions += 1,
            Actor::Novice => self.novice_actions += 1,
        }
        if actor.regime() != self.regime {
            self.context_switches += 1;
            self.regime = actor.regime();
        }
        self.mode = next_mode;
    }

    /// Ends an episode: control returns to the novice for the next one.
    pub fn end_episode(&mut self) {
        if self.regime != Mode::Autonomous {
            self.context_switches += 1;
        }
        self.regime = Mode::Autonomous;
        self.mode = Mode::Autonomous;
    }
}
