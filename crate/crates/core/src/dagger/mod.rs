//! Interactive imitation loops: TubeDAgger, LazyDAgger, EnsembleDAgger and behavioral
//! cloning, with shared episode collection and metric accounting.

mod metrics;

use serde::{Deserialize, Serialize};

use crate::envs::{rollout, step_at, SystemSpec};
use crate::error::{Error, Result};
use crate::gating::{
    doubt_gate, make_doubt_labels, prediction_variance, tube_gate, variance_gate, Actor,
    DoubtGateConfig, GateState, Mode, TubeGateConfig, VarianceGateConfig,
};
use crate::policies::{
    fit, noisy_action, Activation, Ensemble, Loss, MlpPolicy, NoiseConfig, OptimizerConfig,
    OutputHead, Policy,
};
use crate::reachtube::ReachTube;
use crate::rng::SeedTree;

pub use metrics::{
    context_switches_until_solved, evaluate_policy, read_metrics_csv, validate_series,
    write_metrics_csv, MetricsRecord, SwitchesUntilSolved,
};
pub(crate) use metrics::{median, population_std};

/// Aggregated `(state, expert action)` pairs. Append-only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn push(&mut self, state: Vec<f64>, action: Vec<f64>) {
        self.states.push(state);
        self.actions.push(action);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes: usize,
    /// Overrides the system horizon when set.
    pub horizon: Option<usize>,
    pub sigma2: f64,
    pub optimizer: OptimizerConfig,
    /// Optimizer for the LazyDAgger doubt classifier.
    pub doubt_optimizer: OptimizerConfig,
    pub eval_episodes: usize,
    /// Overrides the system's solved threshold when set.
    pub solved_threshold: Option<f64>,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub ensemble_size: usize,
    /// End the run at the first solved episode instead of using the full budget.
    pub stop_when_solved: bool,
    /// Noise-free expert episodes added to the dataset before the first episode.
    pub expert_demos: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 60,
            horizon: None,
            sigma2: 0.1,
            optimizer: OptimizerConfig::default(),
            doubt_optimizer: OptimizerConfig {
                epochs: 10,
                minibatch: 64,
                ..OptimizerConfig::default()
            },
            eval_episodes: 5,
            solved_threshold: None,
            seed: 0,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            ensemble_size: 5,
            stop_when_solved: false,
            expert_demos: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.eval_episodes == 0 {
            return Err(Error::Config(
                "episodes and eval_episodes must be at least 1".into(),
            ));
        }
        if self.horizon == Some(0) {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layers must be nonempty".into()));
        }
        NoiseConfig::new(self.sigma2)?;
        self.optimizer.validate()?;
        self.doubt_optimizer.validate()
    }

    /// The system with this run's horizon applied.
    pub fn system(&self, system: &SystemSpec) -> SystemSpec {
        match self.horizon {
            Some(h) => system.clone().with_horizon(h),
            None => system.clone(),
        }
    }

    pub fn threshold(&self, system: &SystemSpec) -> f64 {
        self.solved_threshold
            .unwrap_or_else(|| self.system(system).solved_threshold())
    }

    fn layers(&self, input: usize, output: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(&self.hidden);
        sizes.push(output);
        sizes
    }
}

/// Fresh novice with the configured architecture, initialized from the run seed.
pub fn new_novice(system: &SystemSpec, cfg: &TrainConfig) -> Result<MlpPolicy> {
    let mut rng = SeedTree::new(cfg.seed).stream("novice-init");
    MlpPolicy::random(
        &cfg.layers(system.state_dim, system.action_dim),
        cfg.activation,
        OutputHead::Linear,
        &mut rng,
    )
}

/// Fresh doubt classifier (sigmoid head) over raw states.
pub fn new_doubt(system: &SystemSpec, cfg: &TrainConfig) -> Result<MlpPolicy> {
    let mut rng = SeedTree::new(cfg.seed).stream("doubt-init");
    MlpPolicy::random(
        &cfg.layers(system.state_dim, 1),
        cfg.activation,
        OutputHead::Sigmoid,
        &mut rng,
    )
}

/// `cfg.ensemble_size` novices with distinct initialization streams.
pub fn new_ensemble(system: &SystemSpec, cfg: &TrainConfig) -> Result<Ensemble> {
    let seeds = SeedTree::new(cfg.seed);
    let members = (0..cfg.ensemble_size)
        .map(|i| {
            MlpPolicy::random(
                &cfg.layers(system.state_dim, system.action_dim),
                cfg.activation,
                OutputHead::Linear,
                &mut seeds.indexed("ensemble-init", i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(members)
}

/// What happened in one collection episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    /// Control regime of every executed step.
    pub regimes: Vec<Mode>,
    pub combined_reward: f64,
    pub failed: bool,
    pub expert_actions: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<P> {
    pub policy: P,
    pub metrics: Vec<MetricsRecord>,
    pub episodes: Vec<EpisodeLog>,
    pub gate: GateState,
    /// The gate signal never left zero, so the expert could not be called in.
    pub degenerate_gate: bool,
    /// The trained doubt classifier, for LazyDAgger runs.
    pub doubt: Option<MlpPolicy>,
}

trait Learner {
    fn novice(&self) -> &dyn Policy;
    fn signal(&self, step: usize, state: &[f64], novice_action: &[f64]) -> Result<f64>;
    fn decide(&self, signal: f64, mode: Mode) -> (Actor, Mode);
    /// Receives every visited state with its expert label.
    fn observe(&mut self, _state: &[f64], _expert_action: &[f64]) {}
    fn wants_all_labels(&self) -> bool {
        false
    }
    fn update(&mut self, data: &Dataset, episode: usize, seeds: &SeedTree) -> Result<()>;
}

fn train_mse(
    policy: &MlpPolicy,
    data: &Dataset,
    cfg: &OptimizerConfig,
    seeds: &SeedTree,
    episode: usize,
) -> Result<MlpPolicy> {
    if data.is_empty() {
        return Ok(policy.clone());
    }
    let mut rng = seeds.indexed("fit", episode as u64);
    Ok(fit(policy, data.states(), data.actions(), Loss::Mse, cfg, &mut rng)?.0)
}

struct TubeLearner<'a> {
    novice: MlpPolicy,
    tube: &'a ReachTube,
    gate: TubeGateConfig,
    system: &'a SystemSpec,
    optimizer: &'a OptimizerConfig,
}

impl Learner for TubeLearner<'_> {
    fn novice(&self) -> &dyn Policy {
        &self.novice
    }

    fn signal(&self, step: usize, state: &[f64], novice_action: &[f64]) -> Result<f64> {
        if self.tube.source.includes_action {
            let mut query = state.to_vec();
            query.extend(self.system.clamp_action(novice_action));
            self.tube.membership(step, &query)
        } else {
            self.tube.membership(step, state)
        }
    }

    fn decide(&self, signal: f64, mode: Mode) -> (Actor, Mode) {
        tube_gate(signal, mode, &self.gate)
    }

    fn update(&mut self, data: &Dataset, episode: usize, seeds: &SeedTree) -> Result<()> {
        self.novice = train_mse(&self.novice, data, self.optimizer, seeds, episode)?;
        Ok(())
    }
}

struct LazyLearner<'a> {
    novice: MlpPolicy,
    doubt: MlpPolicy,
    gate: DoubtGateConfig,
    visited: Vec<(Vec<f64>, Vec<f64>)>,
    cfg: &'a TrainConfig,
}

impl Learner for LazyLearner<'_> {
    fn novice(&self) -> &dyn Policy {
        &self.novice
    }

    fn signal(&self, _step: usize, state: &[f64], _novice_action: &[f64]) -> Result<f64> {
        Ok(self.doubt.forward(state)?[0])
    }

    fn decide(&self, signal: f64, mode: Mode) -> (Actor, Mode) {
        doubt_gate(signal, mode, &self.gate)
    }

    fn observe(&mut self, state: &[f64], expert_action: &[f64]) {
        self.visited.push((state.to_vec(), expert_action.to_vec()));
    }

    fn wants_all_labels(&self) -> bool {
        true
    }

    fn update(&mut self, data: &Dataset, episode: usize, seeds: &SeedTree) -> Result<()> {
        self.novice = train_mse(&self.novice, data, &self.cfg.optimizer, seeds, episode)?;
        // Relabel every visited state against the updated novice.
        let triples = self
            .visited
            .iter()
            .map(|(s, a)| Ok((s.clone(), self.novice.forward(s)?, a.clone())))
            .collect::<Result<Vec<_>>>()?;
        let labeled = make_doubt_labels(&triples, self.gate.tau_m())?;
        if labeled.is_empty() {
            return Ok(());
        }
        let labels: Vec<Vec<f64>> = labeled.labels.iter().map(|&l| vec![l]).collect();
        let mut rng = seeds.indexed("doubt-fit", episode as u64);
        self.doubt = fit(
            &self.doubt,
            &labeled.states,
            &labels,
            Loss::Bce,
            &self.cfg.doubt_optimizer,
            &mut rng,
        )?
        .0;
        Ok(())
    }
}

struct EnsembleLearner<'a> {
    ensemble: Ensemble,
    gate: VarianceGateConfig,
    optimizer: &'a OptimizerConfig,
}

impl Learner for EnsembleLearner<'_> {
    fn novice(&self) -> &dyn Policy {
        &self.ensemble
    }

    fn signal(&self, _step: usize, state: &[f64], _novice_action: &[f64]) -> Result<f64> {
        Ok(prediction_variance(&self.ensemble.predictions(state)?))
    }

    fn decide(&self, signal: f64, mode: Mode) -> (Actor, Mode) {
        variance_gate(signal, mode, &self.gate)
    }

    fn update(&mut self, data: &Dataset, episode: usize, seeds: &SeedTree) -> Result<()> {
        // Every member sees the same minibatch order; diversity comes from initialization.
        for m in &mut self.ensemble.members {
            *m = train_mse(m, data, self.optimizer, seeds, episode)?;
        }
        Ok(())
    }
}

struct RunLog {
    metrics: Vec<MetricsRecord>,
    episodes: Vec<EpisodeLog>,
    gate: GateState,
    max_signal: f64,
}

fn run_gated<L: Learner>(
    system: &SystemSpec,
    expert: &dyn Policy,
    learner: &mut L,
    cfg: &TrainConfig,
) -> Result<RunLog> {
    let seeds = SeedTree::new(cfg.seed);
    let noise = NoiseConfig::new(cfg.sigma2)?;
    let threshold = cfg.threshold(system);
    let eval_seed = seeds.child("eval", 0).master();
    let mut data = Dataset::default();
    seed_with_demos(system, expert, cfg.expert_demos, &seeds, &mut data)?;

    let mut gate = GateState::default();
    let mut log = RunLog {
        metrics: Vec::new(),
        episodes: Vec::new(),
        gate,
        max_signal: 0.0,
    };
    let mut solved = false;
    for ep in 0..cfg.episodes {
        let start = system.sample_start(&mut seeds.indexed("episode-start", ep as u64));
        let mut noise_rng = seeds.indexed("expert-noise", ep as u64);
        let mut state = start;
        let mut mode = Mode::Autonomous;
        let mut regimes = Vec::with_capacity(system.horizon);
        let mut reward = 0.0;
        let mut failed = false;
        let mut expert_steps = 0;
        for t in 0..system.horizon {
            let novice_action = learner.novice().act(&state)?;
            let signal = learner.signal(t, &state, &novice_action)?;
            log.max_signal = log.max_signal.max(signal);
            let (actor, next_mode) = learner.decide(signal, mode);
            let label = if actor == Actor::Expert || learner.wants_all_labels() {
                let a = expert.act(&state)?;
                learner.observe(&state, &a);
                Some(a)
            } else {
                None
            };
            let action = match (actor, label) {
                (Actor::Expert, Some(a)) => {
                    let executed = noisy_action(&a, &noise, &mut noise_rng);
                    data.push(state.clone(), a);
                    expert_steps += 1;
                    executed
                }
                _ => novice_action,
            };
            gate.record(actor, next_mode);
            mode = next_mode;
            regimes.push(actor.regime());
            let next = step_at(system, &state, &action, t)?;
            if system.failure(&next) {
                failed = true;
                break;
            }
            reward += system.step_reward(&next);
            state = next;
        }
        if !failed {
            reward += system.terminal_bonus(&state);
        }
        gate.end_episode();

        learner.update(&data, ep, &seeds)?;
        let (median, std) = evaluate_policy(system, learner.novice(), cfg.eval_episodes, eval_seed)?;
        solved |= median >= threshold;
        let steps = regimes.len().max(1);
        log.metrics.push(MetricsRecord {
            episode: ep,
            eval_reward_median: median,
            eval_reward_std: std,
            combined_reward: reward,
            context_switches_cum: gate.context_switches,
            expert_actions_cum: gate.expert_actions,
            novice_action_pct: 100.0 * (regimes.len() - expert_steps) as f64 / steps as f64,
            dataset_size: data.len(),
            solved,
        });
        log::debug!(
            "episode {ep}: eval {median:.2}, combined {reward:.2}, |D| {}",
            data.len()
        );
        log.episodes.push(EpisodeLog {
            regimes,
            combined_reward: reward,
            failed,
            expert_actions: expert_steps,
        });
        if solved && cfg.stop_when_solved {
            break;
        }
    }
    log.gate = gate;
    Ok(log)
}

fn seed_with_demos(
    system: &SystemSpec,
    expert: &dyn Policy,
    demos: usize,
    seeds: &SeedTree,
    data: &mut Dataset,
) -> Result<Vec<f64>> {
    let mut rewards = Vec::with_capacity(demos);
    for i in 0..demos {
        let seed = seeds.child("demo", i as u64).master();
        let traj = rollout(system, expert, None, seed)?;
        for (s, a) in traj.states.iter().zip(&traj.actions) {
            data.push(s.clone(), a.clone());
        }
        rewards.push(traj.episode_reward);
    }
    Ok(rewards)
}

fn check_tube(system: &SystemSpec, tube: &ReachTube) -> Result<()> {
    if tube.source.system != system.id {
        return Err(Error::Config(format!(
            "tube was built for {}, training on {}",
            tube.source.system, system.id
        )));
    }
    let dim = system.state_dim
        + if tube.source.includes_action {
            system.action_dim
        } else {
            0
        };
    if tube.dim() != dim {
        return Err(Error::Config(format!(
            "tube dimension {} does not match {dim}",
            tube.dim()
        )));
    }
    if tube.horizon() < system.horizon {
        return Err(Error::Config(format!(
            "tube covers {} steps, episodes run {}",
            tube.horizon(),
            system.horizon
        )));
    }
    Ok(())
}

/// TubeDAgger: the expert steps in when the state leaves the `beta_plus`-scaled tube
/// slice and hands back once it is inside the `beta_minus`-scaled one.
pub fn tubedagger_train(
    system: &SystemSpec,
    expert: &dyn Policy,
    novice: MlpPolicy,
    tube: &ReachTube,
    gate: TubeGateConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<MlpPolicy>> {
    cfg.validate()?;
    let system = cfg.system(system);
    check_tube(&system, tube)?;
    let mut learner = TubeLearner {
        novice,
        tube,
        gate,
        system: &system,
        optimizer: &cfg.optimizer,
    };
    let log = run_gated(&system, expert, &mut learner, cfg)?;
    Ok(TrainOutcome {
        policy: learner.novice,
        degenerate_gate: log.max_signal == 0.0,
        metrics: log.metrics,
        episodes: log.episodes,
        gate: log.gate,
        doubt: None,
    })
}

/// LazyDAgger: a doubt classifier predicts when the novice strays from the expert, with
/// hysteresis between `tau_low` and `tau_high`. Both models retrain after every episode.
pub fn lazydagger_train(
    system: &SystemSpec,
    expert: &dyn Policy,
    novice: MlpPolicy,
    doubt: MlpPolicy,
    gate: DoubtGateConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<MlpPolicy>> {
    cfg.validate()?;
    if doubt.output_head() != OutputHead::Sigmoid || doubt.output_dim() != 1 {
        return Err(Error::Config(
            "doubt model needs a single sigmoid output".into(),
        ));
    }
    let system = cfg.system(system);
    let mut learner = LazyLearner {
        novice,
        doubt,
        gate,
        visited: Vec::new(),
        cfg,
    };
    let log = run_gated(&system, expert, &mut learner, cfg)?;
    Ok(TrainOutcome {
        policy: learner.novice,
        degenerate_gate: log.max_signal == 0.0,
        metrics: log.metrics,
        episodes: log.episodes,
        gate: log.gate,
        doubt: Some(learner.doubt),
    })
}

/// EnsembleDAgger: the expert steps in when the members disagree; the deployed action
/// is the member mean.
pub fn ensembledagger_train(
    system: &SystemSpec,
    expert: &dyn Policy,
    ensemble: Ensemble,
    gate: VarianceGateConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<Ensemble>> {
    cfg.validate()?;
    let ensemble = Ensemble::new(ensemble.members)?;
    let system = cfg.system(system);
    let mut learner = EnsembleLearner {
        ensemble,
        gate,
        optimizer: &cfg.optimizer,
    };
    let log = run_gated(&system, expert, &mut learner, cfg)?;
    if log.max_signal == 0.0 {
        log::warn!("ensemble members never disagreed; the expert was never called");
    }
    Ok(TrainOutcome {
        policy: learner.ensemble,
        degenerate_gate: log.max_signal == 0.0,
        metrics: log.metrics,
        episodes: log.episodes,
        gate: log.gate,
        doubt: None,
    })
}

/// Behavioral cloning: `n_demos` noise-free expert episodes, one training pass, one
/// evaluation. The single metrics row describes the finished run.
pub fn behavioral_cloning(
    system: &SystemSpec,
    expert: &dyn Policy,
    novice: MlpPolicy,
    n_demos: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<MlpPolicy>> {
    cfg.validate()?;
    if n_demos == 0 {
        return Err(Error::Config("behavioral cloning needs at least one demo".into()));
    }
    let system = cfg.system(system);
    let seeds = SeedTree::new(cfg.seed);
    let mut data = Dataset::default();
    let rewards = seed_with_demos(&system, expert, n_demos, &seeds, &mut data)?;
    let policy = train_mse(&novice, &data, &cfg.optimizer, &seeds, 0)?;
    let (median, std) = evaluate_policy(
        &system,
        &policy,
        cfg.eval_episodes,
        seeds.child("eval", 0).master(),
    )?;
    let gate = GateState {
        expert_actions: data.len(),
        ..GateState::default()
    };
    let metrics = vec![MetricsRecord {
        episode: n_demos - 1,
        eval_reward_median: median,
        eval_reward_std: std,
        combined_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
        context_switches_cum: 0,
        expert_actions_cum: data.len(),
        novice_action_pct: 0.0,
        dataset_size: data.len(),
        solved: median >= cfg.threshold(&system),
    }];
    Ok(TrainOutcome {
        policy,
        metrics,
        episodes: Vec::new(),
        gate,
        degenerate_gate: false,
        doubt: None,
    })
}
