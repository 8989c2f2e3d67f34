use proptest::prelude::*;

use tubedagger::gating::{
    count_switches, doubt_gate, ensemble_variance, hysteresis, make_doubt_labels, tube_gate, Actor,
    DoubtGateConfig, GateState, Mode, TubeGateConfig, VarianceGateConfig,
};
use tubedagger::policies::{Activation, MlpPolicy, OutputHead};

fn constant_net(value: f64) -> MlpPolicy {
    MlpPolicy::from_parts(
        vec![2, 1],
        Activation::Tanh,
        OutputHead::Linear,
        vec![vec![0.0, 0.0]],
        vec![vec![value]],
    )
    .unwrap()
}

#[test]
fn decision_table_over_a_signal_grid() {
    let (lo, hi) = (0.2, 0.7);
    let cfg = TubeGateConfig::new(lo, hi).unwrap();
    for i in 0..=120 {
        let s = i as f64 / 100.0;
        for mode in [Mode::Autonomous, Mode::Supervisor] {
            let expected = match mode {
                _ if s > hi => (Actor::Expert, Mode::Supervisor),
                Mode::Autonomous => (Actor::Novice, Mode::Autonomous),
                Mode::Supervisor if s < lo => (Actor::Expert, Mode::Autonomous),
                Mode::Supervisor => (Actor::Expert, Mode::Supervisor),
            };
            assert_eq!(tube_gate(s, mode, &cfg), expected, "signal {s}, {mode:?}");
        }
    }
}

#[test]
fn threshold_order_is_enforced() {
    assert!(TubeGateConfig::new(0.7, 0.2).is_err());
    assert!(TubeGateConfig::new(0.5, 0.5).is_err());
    assert!(TubeGateConfig::new(-0.1, 0.5).is_err());
    assert!(TubeGateConfig::from_pair(0.0, 0.0).is_ok());
    assert!(DoubtGateConfig::new(0.5, 0.1, 0.1).is_err());
    assert!(VarianceGateConfig::new(0.05, 0.01).is_err());
}

#[test]
fn single_threshold_doubt_gate_has_no_band() {
    let cfg = DoubtGateConfig::single_threshold(0.5, 0.1).unwrap();
    assert_eq!(doubt_gate(0.6, Mode::Autonomous, &cfg).0, Actor::Expert);
    assert_eq!(doubt_gate(0.4, Mode::Supervisor, &cfg).1, Mode::Autonomous);
}

#[test]
fn switch_counting_closes_open_episodes() {
    use Mode::{Autonomous as A, Supervisor as S};
    assert_eq!(count_switches(&[]), 0);
    assert_eq!(count_switches(&[A, A]), 0);
    assert_eq!(count_switches(&[S]), 2);
    assert_eq!(count_switches(&[A, S, S, A]), 2);
    assert_eq!(count_switches(&[S, A, S]), 4);
}

#[test]
fn doubt_labels_threshold_the_action_gap() {
    let samples = vec![
        (vec![0.0], vec![0.0, 0.0], vec![0.0, 0.05]),
        (vec![1.0], vec![0.0, 0.0], vec![0.06, 0.08]),
        (vec![2.0], vec![1.0, 0.0], vec![0.0, 0.0]),
    ];
    let set = make_doubt_labels(&samples, 0.1).unwrap();
    assert_eq!(set.labels, vec![0.0, 1.0, 1.0]);
    assert_eq!(set.states.len(), 3);
    let bad = vec![(vec![0.0], vec![0.0], vec![0.0, 1.0])];
    assert!(make_doubt_labels(&bad, 0.1).is_err());
}

#[test]
fn ensemble_variance_matches_hand_computation() {
    let members = [constant_net(0.0), constant_net(2.0)];
    assert!((ensemble_variance(&members, &[0.3, 0.1]).unwrap() - 1.0).abs() < 1e-15);
    let same = [constant_net(0.7), constant_net(0.7), constant_net(0.7)];
    assert_eq!(ensemble_variance(&same, &[0.3, 0.1]).unwrap(), 0.0);
    assert!(ensemble_variance(&members[..1], &[0.3, 0.1]).is_err());
}

proptest! {
    #[test]
    fn gate_is_a_pure_function(s in -1.0..3.0f64, lo in 0.0..1.0f64, w in 0.01..1.0f64, sup in any::<bool>()) {
        let mode = if sup { Mode::Supervisor } else { Mode::Autonomous };
        let a = hysteresis(s, mode, lo, lo + w);
        prop_assert_eq!(a, hysteresis(s, mode, lo, lo + w));
        // The expert acts whenever the mode after this step is supervised.
        if a.1 == Mode::Supervisor {
            prop_assert_eq!(a.0, Actor::Expert);
        }
    }

    #[test]
    fn gate_state_counts_like_the_padded_sequence(experts in prop::collection::vec(any::<bool>(), 0..80)) {
        let mut state = GateState::default();
        let mut regimes = Vec::new();
        for &e in &experts {
            let actor = if e { Actor::Expert } else { Actor::Novice };
            regimes.push(actor.regime());
            state.record(actor, actor.regime());
        }
        state.end_episode();
        prop_assert_eq!(state.context_switches, count_switches(&regimes));
        prop_assert_eq!(state.expert_actions + state.novice_actions, experts.len());
        prop_assert_eq!(state.context_switches % 2, 0);
    }
}
