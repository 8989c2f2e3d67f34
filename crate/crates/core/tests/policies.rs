use proptest::prelude::*;

use tubedagger::policies::{
    fit, noisy_action, Activation, Ensemble, Loss, MlpPolicy, NoiseConfig, OptimizerConfig,
    OutputHead, Policy, SavedPolicy,
};
use tubedagger::rng::SeedTree;
use tubedagger::Error;

fn net(seed: u64, sizes: &[usize]) -> MlpPolicy {
    let mut rng = SeedTree::new(seed).stream("net");
    MlpPolicy::random(sizes, Activation::Tanh, OutputHead::Linear, &mut rng).unwrap()
}

#[test]
fn noise_has_the_configured_moments() {
    let noise = NoiseConfig::new(0.1).unwrap();
    let mut rng = SeedTree::new(1).stream("noise");
    let n = 40_000;
    let draws: Vec<f64> = (0..n).map(|_| noisy_action(&[0.3], &noise, &mut rng)[0]).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
    assert!((mean - 0.3).abs() < 0.01, "mean {mean}");
    assert!((var - 0.1).abs() < 0.005, "variance {var}");
}

#[test]
fn zero_noise_is_the_identity() {
    let noise = NoiseConfig::new(0.0).unwrap();
    let mut rng = SeedTree::new(1).stream("noise");
    assert_eq!(noisy_action(&[0.3, -2.0], &noise, &mut rng), vec![0.3, -2.0]);
    assert!(NoiseConfig::new(-1.0).is_err());
}

#[test]
fn fit_learns_a_linear_map() {
    let mut rng = SeedTree::new(2).stream("data");
    let xs: Vec<Vec<f64>> = (0..256)
        .map(|i| vec![(i as f64 / 128.0) - 1.0, ((i * 7) % 256) as f64 / 128.0 - 1.0])
        .collect();
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![0.5 * x[0] - 0.25 * x[1]]).collect();
    let p = net(3, &[2, 16, 1]);
    let cfg = OptimizerConfig { epochs: 200, ..OptimizerConfig::default() };
    let (trained, loss) = fit(&p, &xs, &ys, Loss::Mse, &cfg, &mut rng).unwrap();
    assert!(loss < 1e-3, "loss {loss}");
    let again = fit(&p, &xs, &ys, Loss::Mse, &cfg, &mut SeedTree::new(2).stream("data"));
    assert_eq!(trained, again.unwrap().0);
}

#[test]
fn doubt_classifier_separates_linear_labels() {
    let mut rng = SeedTree::new(4).stream("data");
    let xs: Vec<Vec<f64>> = (0..200)
        .map(|i| vec![(i as f64 / 100.0) - 1.0, ((i * 13) % 200) as f64 / 100.0 - 1.0])
        .collect();
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![(x[0] + x[1] > 0.0) as u8 as f64]).collect();
    let mut init = SeedTree::new(5).stream("init");
    let d = MlpPolicy::random(&[2, 16, 1], Activation::Tanh, OutputHead::Sigmoid, &mut init).unwrap();
    let cfg = OptimizerConfig { epochs: 100, ..OptimizerConfig::default() };
    let (d, _) = fit(&d, &xs, &ys, Loss::Bce, &cfg, &mut rng).unwrap();
    let correct = xs
        .iter()
        .zip(&ys)
        .filter(|(x, y)| (d.forward(x).unwrap()[0] > 0.5) == (y[0] == 1.0))
        .count();
    assert!(correct >= 190, "{correct}/200");
}

#[test]
fn checkpoints_round_trip() {
    let p = net(6, &[3, 5, 2]);
    assert_eq!(MlpPolicy::from_json(&p.to_json()).unwrap(), p);
    assert_eq!(SavedPolicy::from_json(&p.to_json()).unwrap(), SavedPolicy::Mlp(p.clone()));

    let e = Ensemble::new(vec![p.clone(), net(7, &[3, 5, 2])]).unwrap();
    let text = serde_json::to_string(&e).unwrap();
    assert_eq!(SavedPolicy::from_json(&text).unwrap(), SavedPolicy::Ensemble(e));
    assert!(SavedPolicy::from_json("{}").is_err());
}

#[test]
fn ensemble_acts_with_the_member_mean() {
    let a = net(8, &[2, 4, 1]);
    let b = net(9, &[2, 4, 1]);
    let s = [0.2, -0.4];
    let mean = 0.5 * (a.forward(&s).unwrap()[0] + b.forward(&s).unwrap()[0]);
    let e = Ensemble::new(vec![a.clone(), b]).unwrap();
    assert!((e.act(&s).unwrap()[0] - mean).abs() < 1e-15);
    assert!(matches!(Ensemble::new(vec![a]), Err(Error::InsufficientEnsemble { got: 1 })));
}

#[test]
fn malformed_parameters_are_rejected() {
    let bad = MlpPolicy::from_parts(
        vec![2, 1],
        Activation::Tanh,
        OutputHead::Linear,
        vec![vec![0.0; 3]],
        vec![vec![0.0]],
    );
    assert!(matches!(bad, Err(Error::Shape { .. })));
    let nan = MlpPolicy::from_parts(
        vec![1, 1],
        Activation::Relu,
        OutputHead::Linear,
        vec![vec![f64::NAN]],
        vec![vec![0.0]],
    );
    assert!(nan.is_err());
}

proptest! {
    #[test]
    fn outputs_have_the_declared_width(seed in any::<u64>(), input in 1usize..6, hidden in 1usize..9, out in 1usize..4) {
        let p = net(seed, &[input, hidden, out]);
        let y = p.forward(&vec![0.5; input]).unwrap();
        prop_assert_eq!(y.len(), out);
        prop_assert!(y.iter().all(|v| v.is_finite()));
        prop_assert_eq!(p.num_params(), input * hidden + hidden + hidden * out + out);
    }

    #[test]
    fn sigmoid_head_is_a_probability(seed in any::<u64>(), x in -50.0..50.0f64) {
        let mut rng = SeedTree::new(seed).stream("net");
        let d = MlpPolicy::random(&[1, 4, 1], Activation::Relu, OutputHead::Sigmoid, &mut rng).unwrap();
        let p = d.forward(&[x]).unwrap()[0];
        prop_assert!((0.0..=1.0).contains(&p));
    }
}
