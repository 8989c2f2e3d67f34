//! Single training runs and threshold sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{Algorithm, GateSpec, RunConfig, ThresholdPair, DEFAULT_TAU_M_FRACTION};
use crate::dagger::{
    behavioral_cloning, context_switches_until_solved, ensembledagger_train, lazydagger_train,
    median, new_doubt, new_ensemble, new_novice, population_std, tubedagger_train,
    write_metrics_csv, MetricsRecord, SwitchesUntilSolved, TrainConfig,
};
use crate::envs::SystemSpec;
use crate::error::{Error, Result};
use crate::policies::ExpertPolicy;
use crate::reachtube::{read_tube, ReachTube};

/// Immutable inputs shared by every run of a `train` or `sweep` invocation.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub system: SystemSpec,
    pub algorithm: Algorithm,
    pub tube: Option<ReachTube>,
    pub train: TrainConfig,
    pub tau_m: f64,
    pub n_demos: usize,
}

impl RunPlan {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let system = cfg.system()?;
        let algorithm = cfg.algorithm()?;
        cfg.train.validate()?;
        let tube = match (algorithm, &cfg.tube) {
            (Algorithm::Tubedagger, Some(path)) => Some(read_tube(path)?),
            (Algorithm::Tubedagger, None) => {
                return Err(Error::Config("tubedagger needs a tube (use --tube)".into()))
            }
            _ => None,
        };
        if let Some(tube) = &tube {
            if tube.source.system != system.id {
                return Err(Error::Config(format!(
                    "tube was built for {}, run uses {}",
                    tube.source.system, system.id
                )));
            }
        }
        if algorithm == Algorithm::Bc && cfg.n_demos == 0 {
            return Err(Error::Config("bc needs at least one demonstration".into()));
        }
        let tau_m = cfg
            .tau_m
            .unwrap_or(DEFAULT_TAU_M_FRACTION * system.action_diameter());
        Ok(RunPlan {
            system,
            algorithm,
            tube,
            train: cfg.train.clone(),
            tau_m,
            n_demos: cfg.n_demos,
        })
    }

    /// Gate for `pair`; `strict` as in [`GateSpec::new`].
    pub fn gate(&self, pair: ThresholdPair, strict: bool) -> Result<GateSpec> {
        GateSpec::new(self.algorithm, pair, self.tau_m, strict)
    }

    pub fn run(&self, gate: GateSpec, seed: u64) -> Result<RunResult> {
        let cfg = TrainConfig {
            seed,
            ..self.train.clone()
        };
        let system = &self.system;
        let expert = ExpertPolicy::for_system(system);
        let (metrics, checkpoint, doubt, degenerate_gate) = match (self.algorithm, gate) {
            (Algorithm::Tubedagger, GateSpec::Tube(g)) => {
                let tube = self.tube.as_ref().expect("tube loaded with the plan");
                let out = tubedagger_train(system, &expert, new_novice(system, &cfg)?, tube, g, &cfg)?;
                (out.metrics, out.policy.to_json(), None, out.degenerate_gate)
            }
            (Algorithm::Lazydagger, GateSpec::Doubt(g)) => {
                let novice = new_novice(system, &cfg)?;
                let doubt = new_doubt(system, &cfg)?;
                let out = lazydagger_train(system, &expert, novice, doubt, g, &cfg)?;
                let doubt = out.doubt.as_ref().map(|d| d.to_json());
                (out.metrics, out.policy.to_json(), doubt, out.degenerate_gate)
            }
            (Algorithm::Ensembledagger, GateSpec::Variance(g)) => {
                let out = ensembledagger_train(system, &expert, new_ensemble(system, &cfg)?, g, &cfg)?;
                let json = serde_json::to_string(&out.policy).expect("ensemble serializes");
                (out.metrics, json, None, out.degenerate_gate)
            }
            (Algorithm::Bc, _) => {
                let out = behavioral_cloning(system, &expert, new_novice(system, &cfg)?, self.n_demos, &cfg)?;
                (out.metrics, out.policy.to_json(), None, false)
            }
            (algorithm, gate) => {
                return Err(Error::Config(format!("gate {gate:?} does not fit {algorithm}")))
            }
        };
        let summary = context_switches_until_solved(&metrics)?;
        Ok(RunResult {
            seed,
            metrics,
            checkpoint,
            doubt,
            summary,
            degenerate_gate,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub metrics: Vec<MetricsRecord>,
    /// Final policy as JSON.
    pub checkpoint: String,
    /// Final doubt classifier (LazyDAgger).
    pub doubt: Option<String>,
    pub summary: SwitchesUntilSolved,
    pub degenerate_gate: bool,
}

impl RunResult {
    pub fn last(&self) -> &MetricsRecord {
        self.metrics.last().expect("runs record at least one episode")
    }

    /// Writes `metrics.csv`, `policy.json` and, for LazyDAgger, `doubt.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut csv = Vec::new();
        write_metrics_csv(&self.metrics, &mut csv)?;
        fs::write(dir.join("metrics.csv"), csv)?;
        fs::write(dir.join("policy.json"), format!("{}\n", self.checkpoint))?;
        if let Some(doubt) = &self.doubt {
            fs::write(dir.join("doubt.json"), format!("{doubt}\n"))?;
        }
        Ok(())
    }

    pub fn summary_line(&self) -> String {
        let last = self.last();
        let s = &self.summary;
        match s.episode {
            Some(ep) => format!(
                "seed {}: solved at episode {ep}, {} context switches until solved, final eval {:.2}",
                self.seed, s.count, last.eval_reward_median
            ),
            None => format!(
                "seed {}: not solved after {} episodes, {} context switches, final eval {:.2}",
                self.seed,
                self.metrics.len(),
                s.count,
                last.eval_reward_median
            ),
        }
    }
}

/// One row of the sweep CSV: one run of one threshold pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub beta_low: f64,
    pub beta_high: f64,
    pub seed: u64,
    pub status: &'static str,
    pub solved: bool,
    pub solved_episode: Option<usize>,
    pub switches_until_solved: Option<usize>,
    pub final_eval_reward: Option<f64>,
    pub final_novice_action_pct: Option<f64>,
    pub episodes: usize,
    pub error: String,
}

/// Per-pair aggregate over the successful runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub beta_low: f64,
    pub beta_high: f64,
    pub runs: usize,
    pub failed_runs: usize,
    pub solved_runs: usize,
    pub median_eval_reward: Option<f64>,
    pub std_eval_reward: Option<f64>,
    pub median_switches_until_solved: Option<f64>,
    pub median_novice_action_pct: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    pub summaries: Vec<SweepSummary>,
}

impl Sweep {
    pub fn failed_runs(&self) -> usize {
        self.rows.iter().filter(|r| r.status != "ok").count()
    }

    /// Final eval rewards of the successful runs, per pair.
    pub fn eval_groups(&self) -> Vec<(String, Vec<f64>)> {
        self.groups(|r| r.final_eval_reward)
    }

    pub fn novice_pct_groups(&self) -> Vec<(String, Vec<f64>)> {
        self.groups(|r| r.final_novice_action_pct)
    }

    fn groups(&self, value: impl Fn(&SweepRow) -> Option<f64>) -> Vec<(String, Vec<f64>)> {
        self.summaries
            .iter()
            .map(|s| {
                let vals = self
                    .rows
                    .iter()
                    .filter(|r| r.beta_low == s.beta_low && r.beta_high == s.beta_high)
                    .filter_map(&value)
                    .collect();
                (ThresholdPair::new(s.beta_low, s.beta_high).to_string(), vals)
            })
            .collect()
    }
}

/// Directory of one sweep run.
pub fn run_dir(out: &Path, pair: ThresholdPair, seed: u64) -> PathBuf {
    out.join("runs").join(pair.label()).join(format!("seed{seed}"))
}

/// Runs every `(pair, seed)` on a pool of `jobs` workers. Each run writes only its own
/// directory; failures are recorded in the row and the sweep carries on. Results are
/// ordered by grid position, then seed, whatever the worker count.
pub fn sweep(
    plan: &RunPlan,
    grid: &[ThresholdPair],
    seeds: &[u64],
    jobs: usize,
    out: Option<&Path>,
) -> Result<Sweep> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one pair and one seed".into()));
    }
    let gates = grid
        .iter()
        .map(|p| plan.gate(*p, true))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|g| seeds.iter().map(move |&s| (g, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(g, seed)| {
                let pair = grid[g];
                let outcome = plan.run(gates[g], seed).and_then(|r| {
                    if let Some(out) = out {
                        r.write(&run_dir(out, pair, seed))?;
                    }
                    Ok(r)
                });
                match outcome {
                    Ok(r) => {
                        let last = r.last();
                        SweepRow {
                            beta_low: pair.low,
                            beta_high: pair.high,
                            seed,
                            status: "ok",
                            solved: r.summary.solved,
                            solved_episode: r.summary.episode,
                            switches_until_solved: Some(r.summary.count),
                            final_eval_reward: Some(last.eval_reward_median),
                            final_novice_action_pct: Some(last.novice_action_pct),
                            episodes: r.metrics.len(),
                            error: String::new(),
                        }
                    }
                    Err(e) => {
                        log::error!("run {pair} seed {seed} failed: {e}");
                        SweepRow {
                            beta_low: pair.low,
                            beta_high: pair.high,
                            seed,
                            status: "failed",
                            solved: false,
                            solved_episode: None,
                            switches_until_solved: None,
                            final_eval_reward: None,
                            final_novice_action_pct: None,
                            episodes: 0,
                            error: e.to_string(),
                        }
                    }
                }
            })
            .collect()
    });
    let summaries = grid
        .iter()
        .enumerate()
        .map(|(g, pair)| summarize(*pair, &rows[g * seeds.len()..(g + 1) * seeds.len()]))
        .collect();
    Ok(Sweep { rows, summaries })
}

fn summarize(pair: ThresholdPair, rows: &[SweepRow]) -> SweepSummary {
    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.status == "ok").collect();
    let stat = |f: &dyn Fn(&SweepRow) -> Option<f64>, g: fn(&[f64]) -> f64| {
        let vals: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
        (!vals.is_empty()).then(|| g(&vals))
    };
    SweepSummary {
        beta_low: pair.low,
        beta_high: pair.high,
        runs: rows.len(),
        failed_runs: rows.len() - ok.len(),
        solved_runs: ok.iter().filter(|r| r.solved).count(),
        median_eval_reward: stat(&|r| r.final_eval_reward, median),
        std_eval_reward: stat(&|r| r.final_eval_reward, population_std),
        median_switches_until_solved: stat(&|r| r.switches_until_solved.map(|v| v as f64), median),
        median_novice_action_pct: stat(&|r| r.final_novice_action_pct, median),
    }
}

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
