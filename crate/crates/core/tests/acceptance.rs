//! Acceptance checks. Runs without the libtest harness so every criterion prints one
//! PASS or FAIL line; the process exits nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::Rng;

use tubedagger::cli::{sweep, Algorithm, RunPlan, SweepRow, ThresholdPair, DEFAULT_TAU_M_FRACTION};
use tubedagger::dagger::{new_novice, tubedagger_train, TrainConfig};
use tubedagger::envs::{rollout, SystemId, SystemSpec};
use tubedagger::gating::{tube_gate, Mode, TubeGateConfig};
use tubedagger::policies::{
    bce_loss_and_grads, mse_loss_and_grads, Activation, ExpertPolicy, MlpGrads, MlpPolicy,
    OutputHead,
};
use tubedagger::reachtube::{build_tube, cap_radius, ReachTube, TubeConfig, TubeSlice};
use tubedagger::rng::SeedTree;
use tubedagger::safety::{max_outer_membership, tube_contained};

type Outcome = Result<String, String>;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const TUBE_GRID: [(f64, f64); 3] = [(0.5, 0.8), (0.7, 0.9), (0.8, 1.0)];
/// Tight pair, the `tau_high = 1` pair, and an extreme pair close to certainty.
const LAZY_GRID: [(f64, f64); 3] = [(0.1, 0.5), (0.5, 1.0), (0.9, 0.999)];

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn tube_config() -> TubeConfig {
    TubeConfig {
        gamma: 0.2,
        mu: 1.1,
        initial_radius: 0.1,
        batch_size: 512,
        ..TubeConfig::default()
    }
}

fn pendulum() -> SystemSpec {
    SystemSpec::builtin(SystemId::InvertedPendulum)
}

fn vanderpol() -> SystemSpec {
    SystemSpec::builtin(SystemId::Vanderpol)
}

fn c1_tube_coverage(tube: &ReachTube) -> Outcome {
    let start = Instant::now();
    let system = vanderpol();
    let expert = ExpertPolicy::for_system(&system);
    let mut inside = 0;
    for i in 0..500u64 {
        let traj = rollout(&system, &expert, None, 1_000_000 + i).map_err(err)?;
        let mut ok = true;
        for (k, s) in traj.states.iter().enumerate() {
            if tube.membership(k, s).map_err(err)? > 1.0 {
                ok = false;
                break;
            }
        }
        inside += ok as usize;
    }
    let elapsed = start.elapsed();
    ensure(
        inside >= 375 && elapsed < Duration::from_secs(300),
        format!("{inside}/500 holdout rollouts inside every slice (need 375), {elapsed:.1?}"),
    )
}

fn random_metric<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    loop {
        let a = DMatrix::from_fn(n, n, |i, j| {
            let v: f64 = rng.random_range(-1.0..1.0);
            if i == j {
                v + 2.0f64.copysign(v)
            } else {
                v
            }
        });
        if a.determinant().abs() > 0.1 {
            return a;
        }
    }
}

fn slice_from(a: &DMatrix<f64>, c: Vec<f64>, r: f64) -> TubeSlice {
    let n = c.len();
    TubeSlice {
        tau: 0.0,
        c,
        r,
        a: (0..n).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect(),
    }
}

fn c2_membership_oracle() -> Outcome {
    let mut rng = SeedTree::new(2).stream("membership-oracle");
    let (mut agree, mut max_gap) = (0, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(2..=5);
        let a = random_metric(n, &mut rng);
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let r = rng.random_range(0.1..2.0);
        let slice = slice_from(&a, c.clone(), r);
        // Points at a chosen metric distance, kept clear of the boundary itself.
        let mut scale: f64 = rng.random_range(0.0..2.0);
        if (scale - 1.0).abs() < 1e-6 {
            scale += 1e-3;
        }
        let u = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)).normalize();
        let y = a.clone().try_inverse().unwrap() * (u * scale * r);
        let x: Vec<f64> = (0..n).map(|i| c[i] + y[i]).collect();

        let oracle = (&a * DVector::from_fn(n, |i, _| x[i] - c[i])) / r;
        let expected = oracle.norm();
        let got = slice.membership(&x).map_err(err)?;
        max_gap = max_gap.max((got - expected).abs());
        if (got <= 1.0) == (expected <= 1.0) && (got - expected).abs() <= 1e-9 {
            agree += 1;
        }
    }
    ensure(
        agree == 1000,
        format!("{agree}/1000 pairs agree with the affine oracle, max gap {max_gap:.2e}"),
    )
}

fn c3_cap_radius() -> Outcome {
    let r = cap_radius(1.0, 0.5, 1.0, 1.0, 0.0).map_err(err)?;
    let expected = -1.0 + 3.0f64.sqrt();
    let limit = cap_radius(1.0, 1e-8, 1.0, 1.0, 0.0).map_err(err)?;
    let limit2 = cap_radius(2.0, 1e-8, 1.5, 2.0, 1.0).map_err(err)?;
    ensure(
        (r - expected).abs() < 1e-9 && (limit - 1.0).abs() < 1e-6 && (limit2 - 1.0).abs() < 1e-6,
        format!("r = {r:.12} (expected {expected:.12}); small-slope limits {limit:.9}, {limit2:.9}"),
    )
}

fn c4_no_chatter() -> Outcome {
    let mut runner = TestRunner::new(PropConfig {
        cases: 1000,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let strategy = (
        0.0..1.0f64,
        0.01..1.0f64,
        0.0..3.0f64,
        any::<bool>(),
        prop::collection::vec(0.001..0.999f64, 1..60),
    );
    let result = runner.run(&strategy, |(lo, width, first, supervised, fractions)| {
        let hi = lo + width;
        let cfg = TubeGateConfig::new(lo, hi).unwrap();
        let mut mode = if supervised { Mode::Supervisor } else { Mode::Autonomous };
        let mut transitions = 0;
        let signals = std::iter::once(first).chain(fractions.iter().map(|f| lo + f * width));
        for s in signals {
            let (_, next) = tube_gate(s, mode, &cfg);
            transitions += (next != mode) as usize;
            mode = next;
        }
        prop_assert!(transitions <= 1, "{transitions} transitions");
        Ok(())
    });
    match result {
        Ok(()) => Ok("1000 randomized band-confined sequences, zero violations".into()),
        Err(e) => Err(format!("violation: {e}")),
    }
}

fn plan(algorithm: Algorithm, tube: Option<&ReachTube>) -> RunPlan {
    let system = pendulum();
    RunPlan {
        tau_m: DEFAULT_TAU_M_FRACTION * system.action_diameter(),
        system,
        algorithm,
        tube: tube.cloned(),
        train: TrainConfig {
            episodes: 60,
            stop_when_solved: true,
            ..TrainConfig::default()
        },
        n_demos: 20,
    }
}

fn pairs(grid: &[(f64, f64)]) -> Vec<ThresholdPair> {
    grid.iter().map(|&(l, h)| ThresholdPair::new(l, h)).collect()
}

fn cell<'a>(rows: &'a [SweepRow], pair: (f64, f64)) -> Vec<&'a SweepRow> {
    rows.iter()
        .filter(|r| r.beta_low == pair.0 && r.beta_high == pair.1)
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Unsolved runs never stop calling the expert, so they count as infinitely many switches.
fn median_switches(rows: &[&SweepRow]) -> f64 {
    median(
        rows.iter()
            .map(|r| match (r.solved, r.switches_until_solved) {
                (true, Some(n)) => n as f64,
                _ => f64::INFINITY,
            })
            .collect(),
    )
}

fn median_eval(rows: &[&SweepRow]) -> f64 {
    median(rows.iter().map(|r| r.final_eval_reward.unwrap_or(f64::NAN)).collect())
}

fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

struct PendulumRuns {
    tube_default: Vec<SweepRow>,
    tube_grid: Vec<SweepRow>,
    lazy_grid: Vec<SweepRow>,
    default_elapsed: Duration,
}

fn pendulum_runs(tube: &ReachTube) -> Result<PendulumRuns, String> {
    let tube_plan = plan(Algorithm::Tubedagger, Some(tube));
    let start = Instant::now();
    let tube_default = sweep(&tube_plan, &pairs(&[(0.2, 0.7)]), &SEEDS, 1, None).map_err(err)?;
    let default_elapsed = start.elapsed();
    let tube_grid = sweep(&tube_plan, &pairs(&TUBE_GRID), &SEEDS, 1, None).map_err(err)?;
    let lazy_plan = plan(Algorithm::Lazydagger, None);
    let lazy_grid = sweep(&lazy_plan, &pairs(&LAZY_GRID), &SEEDS, 1, None).map_err(err)?;
    Ok(PendulumRuns {
        tube_default: tube_default.rows,
        tube_grid: tube_grid.rows,
        lazy_grid: lazy_grid.rows,
        default_elapsed,
    })
}

fn c5_pendulum_solve(runs: &PendulumRuns) -> Outcome {
    let threshold = pendulum().solved_threshold();
    let rows = &runs.tube_default;
    let solved: Vec<&SweepRow> = rows
        .iter()
        .filter(|r| {
            r.status == "ok"
                && r.solved
                && r.solved_episode.is_some_and(|e| e < 60)
                && r.final_eval_reward.is_some_and(|v| v >= threshold)
        })
        .collect();
    let episodes: Vec<String> = rows
        .iter()
        .map(|r| r.solved_episode.map_or("-".into(), |e| e.to_string()))
        .collect();
    let rewards: Vec<String> = rows
        .iter()
        .map(|r| r.final_eval_reward.map_or("-".into(), |v| format!("{v:.2}")))
        .collect();
    ensure(
        solved.len() == 5 && runs.default_elapsed < Duration::from_secs(600),
        format!(
            "{}/5 seeds solved (threshold {threshold}); solved at episodes [{}], eval [{}], {:.1?}",
            solved.len(),
            episodes.join(", "),
            rewards.join(", "),
            runs.default_elapsed
        ),
    )
}

fn c6_interventions(runs: &PendulumRuns) -> Outcome {
    let tube: Vec<&SweepRow> = runs.tube_default.iter().collect();
    let tube_median = median_switches(&tube);
    let lazy: Vec<f64> = LAZY_GRID
        .iter()
        .map(|&p| median_switches(&cell(&runs.lazy_grid, p)))
        .collect();
    let best = lazy.iter().copied().fold(f64::INFINITY, f64::min);
    ensure(
        tube_median <= best,
        format!("median switches until solved: tube {tube_median}, lazy grid {lazy:?} (best {best})"),
    )
}

fn c7_robustness(runs: &PendulumRuns) -> Outcome {
    let tube: Vec<f64> = TUBE_GRID
        .iter()
        .map(|&p| median_eval(&cell(&runs.tube_grid, p)))
        .collect();
    let lazy: Vec<f64> = LAZY_GRID
        .iter()
        .map(|&p| median_eval(&cell(&runs.lazy_grid, p)))
        .collect();
    let (ts, ls) = (spread(&tube), spread(&lazy));
    ensure(
        ts <= ls && tube.iter().chain(&lazy).all(|v| v.is_finite()),
        format!("median eval spread: tube {ts:.2} over {tube:?}, lazy {ls:.2} over {lazy:?}"),
    )
}

fn c8_behavioral_cloning(tube: &ReachTube) -> Outcome {
    let system = pendulum();
    let cfg = TrainConfig {
        episodes: 3,
        seed: 8,
        ..TrainConfig::default()
    };
    let novice = new_novice(&system, &cfg).map_err(err)?;
    let expert = ExpertPolicy::for_system(&system);
    let gate = TubeGateConfig::from_pair(0.0, 0.0).map_err(err)?;
    let out = tubedagger_train(&system, &expert, novice, tube, gate, &cfg).map_err(err)?;
    let horizon = system.horizon;
    let mut prev = 0;
    let mut detail = Vec::new();
    let mut ok = out.metrics.len() == 3;
    for (m, log) in out.metrics.iter().zip(&out.episodes) {
        let grew = m.dataset_size - prev;
        prev = m.dataset_size;
        ok &= m.novice_action_pct == 0.0 && grew == horizon && log.expert_actions == horizon;
        detail.push(format!("{}% novice, +{grew}", m.novice_action_pct));
    }
    ensure(ok, format!("horizon {horizon}: {}", detail.join("; ")))
}

fn flat_grads(g: &MlpGrads) -> Vec<f64> {
    g.values().collect()
}

fn rel_ok(analytic: f64, numeric: f64) -> bool {
    let gap = (analytic - numeric).abs();
    gap <= 1e-4 * analytic.abs().max(numeric.abs()) || gap <= 1e-9
}

fn mse_oracle(p: &MlpPolicy, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let out = p.forward(x).unwrap();
        total += out.iter().zip(y).map(|(o, t)| (o - t).powi(2)).sum::<f64>();
    }
    total / (xs.len() * ys[0].len()) as f64
}

fn bce_oracle(p: &MlpPolicy, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let q = p.forward(x).unwrap()[0];
        total -= y * q.ln() + (1.0 - y) * (1.0 - q).ln();
    }
    total / xs.len() as f64
}

fn finite_difference(p: &MlpPolicy, loss: &dyn Fn(&MlpPolicy) -> f64) -> Vec<f64> {
    let h = 1e-5;
    (0..p.num_params())
        .map(|i| {
            let mut plus = p.clone();
            *plus.params_mut().nth(i).unwrap() += h;
            let mut minus = p.clone();
            *minus.params_mut().nth(i).unwrap() -= h;
            (loss(&plus) - loss(&minus)) / (2.0 * h)
        })
        .collect()
}

fn c9_gradients() -> Outcome {
    let mut rng = SeedTree::new(9).stream("gradient-check");
    let (mut checked, mut bad) = (0, 0);
    for k in 0..20 {
        let input = rng.random_range(1..5);
        let mut sizes = vec![input];
        for _ in 0..rng.random_range(1..3) {
            sizes.push(rng.random_range(2..8));
        }
        let batch = rng.random_range(1..9);
        let xs: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..input).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();

        let outputs = rng.random_range(1..4);
        let mut mse_sizes = sizes.clone();
        mse_sizes.push(outputs);
        let p = MlpPolicy::random(&mse_sizes, Activation::Tanh, OutputHead::Linear, &mut rng)
            .map_err(err)?;
        let ys: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..outputs).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let (loss, grads) = mse_loss_and_grads(&p, &xs, &ys).map_err(err)?;
        if (loss - mse_oracle(&p, &xs, &ys)).abs() > 1e-12 {
            return Err(format!("network {k}: MSE value disagrees with the forward-pass oracle"));
        }
        let numeric = finite_difference(&p, &|q| mse_oracle(q, &xs, &ys));
        for (a, n) in flat_grads(&grads).into_iter().zip(numeric) {
            checked += 1;
            bad += !rel_ok(a, n) as usize;
        }

        let mut bce_sizes = sizes.clone();
        bce_sizes.push(1);
        let d = MlpPolicy::random(&bce_sizes, Activation::Tanh, OutputHead::Sigmoid, &mut rng)
            .map_err(err)?;
        let labels: Vec<f64> = (0..batch).map(|_| rng.random_range(0..2) as f64).collect();
        let (loss, grads) = bce_loss_and_grads(&d, &xs, &labels).map_err(err)?;
        if (loss - bce_oracle(&d, &xs, &labels)).abs() > 1e-10 {
            return Err(format!("network {k}: BCE value disagrees with the forward-pass oracle"));
        }
        let numeric = finite_difference(&d, &|q| bce_oracle(q, &xs, &labels));
        for (a, n) in flat_grads(&grads).into_iter().zip(numeric) {
            checked += 1;
            bad += !rel_ok(a, n) as usize;
        }
    }
    ensure(
        bad == 0,
        format!("20 MSE and 20 BCE networks, {checked} partials, {bad} outside 1e-4 relative"),
    )
}

fn boundary_point(slice: &TubeSlice, a_inv: &DMatrix<f64>, u: &DVector<f64>) -> Vec<f64> {
    let y = a_inv * u * slice.r;
    slice.c.iter().zip(y.iter()).map(|(c, y)| c + y).collect()
}

fn c10_containment(tube: &ReachTube) -> Outcome {
    let inner = tube_contained(&tube.scaled(0.9), tube).map_err(err)?;
    let outer = tube_contained(&tube.scaled(1.1), tube).map_err(err)?;
    if !inner.all_contained || outer.all_contained {
        return Err(format!(
            "0.9-scaled contained: {}, 1.1-scaled contained: {}",
            inner.all_contained, outer.all_contained
        ));
    }

    let mut rng = SeedTree::new(10).stream("containment-oracle");
    let (mut said_contained, mut violations) = (0, 0);
    for _ in 0..200 {
        let n = rng.random_range(2..=4);
        let a_out = random_metric(n, &mut rng);
        let c_out: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let big = slice_from(&a_out, c_out.clone(), rng.random_range(0.5..2.0));
        let a_in = random_metric(n, &mut rng);
        let c_in: Vec<f64> = c_out.iter().map(|c| c + rng.random_range(-0.2..0.2)).collect();
        let small = slice_from(&a_in, c_in, rng.random_range(0.05..0.6));
        let a_in_inv = a_in.try_inverse().unwrap();

        let witness = max_outer_membership(&small, &big).map_err(err)?;
        if witness.contained() {
            said_contained += 1;
            for _ in 0..2000 {
                let u = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)).normalize();
                let x = boundary_point(&small, &a_in_inv, &u);
                if big.membership(&x).map_err(err)? > 1.0 + 1e-9 {
                    violations += 1;
                    break;
                }
            }
        } else {
            // A refutation must come with a boundary point of the inner slice outside the outer one.
            let on_inner = small.membership(&witness.point).map_err(err)?;
            let in_outer = big.membership(&witness.point).map_err(err)?;
            if (on_inner - 1.0).abs() > 1e-6 || in_outer <= 1.0 {
                violations += 1;
            }
        }
    }
    ensure(
        violations == 0,
        format!(
            "scaled copies ok; 200 random pairs ({said_contained} contained), {violations} disagreements with sampling"
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tubedagger"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(err)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(dir: &Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let tube = dir.join("tube.json");
    let run = dir.join("run");
    run_cli(&[
        "build-tube",
        "--env",
        "inverted_pendulum",
        "--seed",
        "11",
        "--out",
        tube.to_str().unwrap(),
    ])?;
    run_cli(&[
        "train",
        "--env",
        "inverted_pendulum",
        "--algorithm",
        "tubedagger",
        "--tube",
        tube.to_str().unwrap(),
        "--episodes",
        "2",
        "--seed",
        "11",
        "--out",
        run.to_str().unwrap(),
    ])?;
    Ok((
        std::fs::read(&tube).map_err(err)?,
        std::fs::read(run.join("metrics.csv")).map_err(err)?,
    ))
}

fn c11_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let first = pipeline(&dir.path().join("a"))?;
    let second = pipeline(&dir.path().join("b"))?;
    ensure(
        first == second,
        format!(
            "tube JSON {} bytes identical: {}, metrics CSV {} bytes identical: {}",
            first.0.len(),
            first.0 == second.0,
            first.1.len(),
            first.1 == second.1
        ),
    )
}

fn report(id: usize, name: &str, check: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(check))
        .unwrap_or_else(|p| Err(format!("panicked: {}", panic_text(&p))));
    let secs = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(d) => println!("criterion {id:>2} PASS  {name}: {d} [{secs:.1}s]"),
        Err(d) => println!("criterion {id:>2} FAIL  {name}: {d} [{secs:.1}s]"),
    }
    outcome.is_ok()
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn main() {
    // `cargo test -- --list` and filtered runs should not trigger the full suite.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if let Some(filter) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            return;
        }
    }

    let system = vanderpol();
    let expert = ExpertPolicy::for_system(&system);
    let vdp = build_tube(&system, &expert, &tube_config(), 0).map(|b| b.tube);
    let pend_system = pendulum();
    let pend = build_tube(&pend_system, &ExpertPolicy::for_system(&pend_system), &tube_config(), 0)
        .map(|b| b.tube);
    let (vdp, pend) = match (vdp, pend) {
        (Ok(v), Ok(p)) => (v, p),
        (v, p) => {
            println!("FAIL  tube builds: {:?} {:?}", v.err(), p.err());
            std::process::exit(1);
        }
    };
    let runs = pendulum_runs(&pend);

    let mut passed = 0;
    let mut total = 0;
    let mut tally = |ok: bool| {
        total += 1;
        passed += ok as usize;
    };
    tally(report(1, "tube coverage", || c1_tube_coverage(&vdp)));
    tally(report(2, "membership oracle", c2_membership_oracle));
    tally(report(3, "cap radius", c3_cap_radius));
    tally(report(4, "hysteresis without chatter", c4_no_chatter));
    tally(report(5, "pendulum solve", || c5_pendulum_solve(runs.as_ref()?)));
    tally(report(6, "intervention reduction", || c6_interventions(runs.as_ref()?)));
    tally(report(7, "threshold robustness", || c7_robustness(runs.as_ref()?)));
    tally(report(8, "behavioral-cloning degeneration", || c8_behavioral_cloning(&pend)));
    tally(report(9, "gradient checks", c9_gradients));
    tally(report(10, "safety containment", || c10_containment(&vdp)));
    tally(report(11, "determinism", c11_determinism));
    println!("acceptance: {passed}/{total} criteria passed");
    if passed != total {
        std::process::exit(1);
    }
}
