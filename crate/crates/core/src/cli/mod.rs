//! Command-line driver: tube building, training runs, threshold sweeps, evaluation,
//! safety checks and plots.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod config;
mod runs;
mod svg;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{
    env_seed, Algorithm, GateSpec, RunConfig, ThresholdPair, DEFAULT_TAU_M_FRACTION, SEED_ENV,
};
pub use runs::{run_dir, sweep, RunPlan, RunResult, Sweep, SweepRow, SweepSummary};
pub use svg::{boxplot, metrics_plot, tube_plot};

use crate::dagger::{evaluate_policy, read_metrics_csv};
use crate::envs::SystemSpec;
use crate::error::{Error, Result};
use crate::policies::{ExpertPolicy, Policy, SavedPolicy};
use crate::reachtube::{build_tube, build_tube_for, read_tube, write_tube, TubeBuild};
use crate::safety::tube_contained;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "tubedagger", version, about = "Reach-tube gated interactive imitation learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a stochastic reach-tube around the expert (or a saved policy).
    BuildTube(BuildTubeArgs),
    /// Train with one threshold pair over one or more seeds.
    Train(TrainArgs),
    /// Train every threshold pair of a grid over several seeds.
    Sweep(SweepArgs),
    /// Evaluate a saved policy without the expert.
    Eval(EvalArgs),
    /// Check that an imitator tube lies inside the expert tube.
    CheckSafety(CheckSafetyArgs),
    /// Plot tube slices projected onto two state dimensions.
    PlotTube(PlotTubeArgs),
    /// Plot per-episode rewards from metrics CSV files.
    PlotMetrics(PlotMetricsArgs),
}

#[derive(Debug, Args)]
pub struct BuildTubeArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Radius of the initial ball.
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_batches: Option<usize>,
    #[arg(long)]
    pub coverage_samples: Option<usize>,
    /// Episode length; defaults to the environment's.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Build over state and action concatenated (experimental).
    #[arg(long)]
    pub include_action: bool,
    /// Build around this policy checkpoint instead of the scripted expert.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short, default_value = "tube.json")]
    pub out: PathBuf,
}

/// Options shared by `train` and `sweep`.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long, value_enum)]
    pub algorithm: Option<Algorithm>,
    /// Tube JSON (tubedagger only).
    #[arg(long)]
    pub tube: Option<PathBuf>,
    /// Seeds, comma separated or repeated.
    #[arg(long = "seed", value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub minibatch: Option<usize>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    #[arg(long)]
    pub solved_threshold: Option<f64>,
    /// End each run at its first solved episode.
    #[arg(long)]
    pub stop_when_solved: bool,
    /// Noise-free expert episodes added to the dataset before training.
    #[arg(long)]
    pub expert_demos: Option<usize>,
    /// Doubt-label distance (lazydagger).
    #[arg(long)]
    pub tau_m: Option<f64>,
    /// Demonstrations for the bc baseline.
    #[arg(long)]
    pub n_demos: Option<usize>,
    /// Worker threads for independent runs.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Lower and upper gate thresholds as LOW,HIGH.
    #[arg(long)]
    pub gate: Option<ThresholdPair>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Threshold pair LOW,HIGH; repeat for each grid point.
    #[arg(long = "pair")]
    pub pairs: Vec<ThresholdPair>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub env: String,
    /// Policy or ensemble checkpoint; `expert` evaluates the scripted expert.
    #[arg(long)]
    pub policy: String,
    #[arg(long, default_value_t = 5)]
    pub episodes: usize,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CheckSafetyArgs {
    #[arg(long)]
    pub imitator: PathBuf,
    #[arg(long)]
    pub expert: PathBuf,
    /// Write the full report as JSON.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Exit with status 1 when containment fails.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct PlotTubeArgs {
    #[arg(long)]
    pub tube: PathBuf,
    /// State dimensions as I,J.
    #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1])]
    pub dims: Vec<usize>,
    /// Draw every k-th slice.
    #[arg(long, default_value_t = 10)]
    pub every: usize,
    /// Overlay the beta_minus and beta_plus boundaries, as LOW,HIGH.
    #[arg(long)]
    pub overlay: Option<ThresholdPair>,
    #[arg(long, short, default_value = "tube.svg")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotMetricsArgs {
    /// Metrics CSV files.
    #[arg(required = true)]
    pub metrics: Vec<PathBuf>,
    #[arg(long, short, default_value = "metrics.svg")]
    pub out: PathBuf,
}

/// Entry point used by the binary: parses `std::env::args` and returns an exit code.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_target(false)
        .try_init();
    run(std::env::args_os())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Configuration problems are usage errors; everything else is a runtime failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::BuildTube(a) => cmd_build_tube(a),
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Eval(a) => cmd_eval(a),
        Command::CheckSafety(a) => cmd_check_safety(a),
        Command::PlotTube(a) => cmd_plot_tube(a),
        Command::PlotMetrics(a) => cmd_plot_metrics(a),
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => Ok(fs::create_dir_all(dir)?),
        _ => Ok(()),
    }
}

fn parse_env(name: &str) -> Result<crate::envs::SystemId> {
    name.parse()
}

fn cmd_build_tube(a: BuildTubeArgs) -> Result<i32> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    if let Some(env) = &a.env {
        cfg.env = Some(parse_env(env)?);
    }
    let t = &mut cfg.tube_build;
    t.gamma = a.gamma.unwrap_or(t.gamma);
    t.mu = a.mu.unwrap_or(t.mu);
    t.initial_radius = a.radius.unwrap_or(t.initial_radius);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.max_batches = a.max_batches.unwrap_or(t.max_batches);
    t.coverage_samples = a.coverage_samples.unwrap_or(t.coverage_samples);
    t.include_action |= a.include_action;
    t.validate()?;
    cfg.train.horizon = a.horizon.or(cfg.train.horizon);
    cfg.resolve_seeds(&a.seed.into_iter().collect::<Vec<_>>())?;
    let seed = cfg.seeds[0];
    let system = cfg.train.system(&cfg.system()?);
    system.validate()?;

    create_parent(&a.out)?;
    let built = match &a.policy {
        Some(path) => {
            let policy = SavedPolicy::load(path)?;
            build_tube_for(&system, &policy, "imitator", &cfg.tube_build, seed)
        }
        None => build_tube(&system, &ExpertPolicy::for_system(&system), &cfg.tube_build, seed),
    };
    match built {
        Ok(TubeBuild { tube, report }) => {
            write_tube(&tube, &a.out)?;
            println!(
                "wrote {}: {} slices, {} batches, |V| = {}, coverage {:.4} (target {:.4})",
                a.out.display(),
                tube.len(),
                report.batches,
                report.traces,
                report.coverage,
                report.coverage_target
            );
            Ok(EXIT_OK)
        }
        Err(Error::CoverageNotReached { partial, .. }) => {
            let mut name = a.out.clone().into_os_string();
            name.push(".partial");
            let path = PathBuf::from(name);
            write_tube(&partial.tube, &path)?;
            let r = &partial.report;
            eprintln!(
                "error: coverage {:.4} below target {:.4} after {} batches (|V| = {}); partial tube in {}",
                r.coverage,
                r.coverage_target,
                r.batches,
                r.traces,
                path.display()
            );
            Ok(EXIT_FAILURE)
        }
        Err(e) => Err(e),
    }
}

/// Merges `RunArgs` into the config file contents.
fn run_config(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    if let Some(env) = &a.env {
        cfg.env = Some(parse_env(env)?);
    }
    cfg.algorithm = a.algorithm.or(cfg.algorithm);
    cfg.tube = a.tube.clone().or(cfg.tube);
    cfg.tau_m = a.tau_m.or(cfg.tau_m);
    cfg.n_demos = a.n_demos.unwrap_or(cfg.n_demos);
    cfg.out_dir = a.out.clone().or(cfg.out_dir);
    let t = &mut cfg.train;
    t.episodes = a.episodes.unwrap_or(t.episodes);
    t.horizon = a.horizon.or(t.horizon);
    t.sigma2 = a.sigma2.unwrap_or(t.sigma2);
    t.optimizer.lr = a.lr.unwrap_or(t.optimizer.lr);
    t.optimizer.epochs = a.epochs.unwrap_or(t.optimizer.epochs);
    t.optimizer.minibatch = a.minibatch.unwrap_or(t.optimizer.minibatch);
    t.eval_episodes = a.eval_episodes.unwrap_or(t.eval_episodes);
    t.solved_threshold = a.solved_threshold.or(t.solved_threshold);
    t.stop_when_solved |= a.stop_when_solved;
    t.expert_demos = a.expert_demos.unwrap_or(t.expert_demos);
    cfg.resolve_seeds(&a.seeds)?;
    Ok(cfg)
}

fn jobs(requested: Option<usize>) -> usize {
    requested.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let mut cfg = run_config(&a.run)?;
    cfg.gate = a.gate.or(cfg.gate);
    let plan = RunPlan::from_config(&cfg)?;
    let pair = cfg.gate.unwrap_or_else(|| plan.algorithm.default_pair());
    let gate = plan.gate(pair, false)?;
    let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs(a.run.jobs))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<RunResult>> = pool.install(|| {
        use rayon::prelude::*;
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let r = plan.run(gate, seed)?;
                let dir = if cfg.seeds.len() == 1 {
                    out.clone()
                } else {
                    out.join(format!("seed{seed}"))
                };
                r.write(&dir)?;
                Ok(r)
            })
            .collect()
    });
    let mut first_err = None;
    for (seed, r) in cfg.seeds.iter().zip(results) {
        match r {
            Ok(r) => {
                if r.degenerate_gate {
                    log::warn!("seed {seed}: gate signal stayed at zero for the whole run");
                }
                println!("{} {pair}: {}", plan.algorithm, r.summary_line());
            }
            Err(e) => {
                eprintln!("error: seed {seed}: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        None => Ok(EXIT_OK),
        Some(e) => Err(e),
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<i32> {
    let mut cfg = run_config(&a.run)?;
    if !a.pairs.is_empty() {
        cfg.grid = a.pairs.clone();
    }
    if cfg.grid.is_empty() {
        return Err(Error::Config("sweep needs at least one --pair".into()));
    }
    for p in &cfg.grid {
        p.strict()?;
    }
    let plan = RunPlan::from_config(&cfg)?;
    let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("sweep"));
    fs::create_dir_all(&out)?;
    let result = sweep(&plan, &cfg.grid, &cfg.seeds, jobs(a.run.jobs), Some(&out))?;
    runs::write_csv(&result.rows, &out.join("sweep.csv"))?;
    runs::write_csv(&result.summaries, &out.join("summary.csv"))?;
    let title = format!("{} on {}", plan.algorithm, plan.system.id);
    fs::write(
        out.join("eval_reward.svg"),
        boxplot(&format!("{title}: final eval reward"), "eval reward", &result.eval_groups()),
    )?;
    fs::write(
        out.join("novice_action_pct.svg"),
        boxplot(
            &format!("{title}: novice actions in the last episode"),
            "novice actions (%)",
            &result.novice_pct_groups(),
        ),
    )?;
    for s in &result.summaries {
        println!(
            "{} ({}, {}): {}/{} solved, median eval {}, median switches until solved {}",
            plan.algorithm,
            s.beta_low,
            s.beta_high,
            s.solved_runs,
            s.runs - s.failed_runs,
            fmt_opt(s.median_eval_reward),
            fmt_opt(s.median_switches_until_solved)
        );
    }
    let failed = result.failed_runs();
    if failed > 0 {
        eprintln!("error: {failed} of {} runs failed; see sweep.csv", result.rows.len());
        return Ok(EXIT_FAILURE);
    }
    Ok(EXIT_OK)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

fn cmd_eval(a: EvalArgs) -> Result<i32> {
    let mut system = SystemSpec::builtin(parse_env(&a.env)?);
    if let Some(h) = a.horizon {
        system = system.with_horizon(h);
    }
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let policy: Box<dyn Policy> = if a.policy == "expert" {
        Box::new(ExpertPolicy::for_system(&system))
    } else {
        Box::new(SavedPolicy::load(Path::new(&a.policy))?)
    };
    let (median, std) = evaluate_policy(&system, policy.as_ref(), a.episodes, seed)?;
    let line = serde_json::json!({
        "env": system.id,
        "episodes": a.episodes,
        "seed": seed,
        "median": median,
        "std": std,
        "solved": median >= system.solved_threshold(),
    });
    println!("{line}");
    Ok(EXIT_OK)
}

fn cmd_check_safety(a: CheckSafetyArgs) -> Result<i32> {
    let imitator = read_tube(&a.imitator)?;
    let expert = read_tube(&a.expert)?;
    let report = tube_contained(&imitator, &expert)?;
    if let Some(path) = &a.out {
        create_parent(path)?;
        let mut f = fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, &report).map_err(std::io::Error::from)?;
        writeln!(f)?;
    }
    let worst = report.max_membership.iter().copied().fold(0.0, f64::max);
    match report.first_violation {
        None => println!(
            "contained: all {} slices; safe with probability >= {} (largest expert membership {worst:.6})",
            report.contained.len(),
            report.probability_p
        ),
        Some(k) => println!(
            "not contained: first violation at slice {k} (membership {:.6}); {} of {} slices contained",
            report.max_membership[k],
            report.contained.iter().filter(|c| **c).count(),
            report.contained.len()
        ),
    }
    Ok(if a.strict && !report.all_contained {
        EXIT_FAILURE
    } else {
        EXIT_OK
    })
}

fn cmd_plot_tube(a: PlotTubeArgs) -> Result<i32> {
    let &[i, j] = a.dims.as_slice() else {
        return Err(Error::Config(format!("--dims takes two indices, got {}", a.dims.len())));
    };
    let tube = read_tube(&a.tube)?;
    let overlay = a.overlay.map(|p| (p.low, p.high));
    let svg = tube_plot(&tube, (i, j), a.every, overlay)?;
    create_parent(&a.out)?;
    fs::write(&a.out, svg)?;
    println!("wrote {}", a.out.display());
    Ok(EXIT_OK)
}

fn cmd_plot_metrics(a: PlotMetricsArgs) -> Result<i32> {
    let series = a
        .metrics
        .iter()
        .map(|p| {
            let f = fs::File::open(p)?;
            Ok((p.display().to_string(), read_metrics_csv(f)?))
        })
        .collect::<Result<Vec<_>>>()?;
    create_parent(&a.out)?;
    fs::write(&a.out, metrics_plot(&series)?)?;
    println!("wrote {}", a.out.display());
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_line_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["tubedagger", "build-tube", "--gamma", "x"]), EXIT_USAGE);
        assert_eq!(run(["tubedagger", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["tubedagger", "--help"]), EXIT_OK);
    }
}
