use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::envs::{rollout, SystemSpec};
use crate::error::{Error, Result};
use crate::policies::Policy;
use crate::rng::SeedTree;

/// One row of the per-episode metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub episode: usize,
    pub eval_reward_median: f64,
    pub eval_reward_std: f64,
    /// Reward of the gated novice-expert agent during collection.
    pub combined_reward: f64,
    pub context_switches_cum: usize,
    pub expert_actions_cum: usize,
    pub novice_action_pct: f64,
    pub dataset_size: usize,
    pub solved: bool,
}

pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a metrics CSV and checks the series invariants.
pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let records = rd
        .deserialize()
        .collect::<std::result::Result<Vec<MetricsRecord>, _>>()?;
    validate_series(&records)?;
    Ok(records)
}

pub fn validate_series(records: &[MetricsRecord]) -> Result<()> {
    for (k, r) in records.iter().enumerate() {
        if !(0.0..=100.0).contains(&r.novice_action_pct) {
            return Err(Error::Validation(format!(
                "row {k}: novice_action_pct {} outside [0, 100]",
                r.novice_action_pct
            )));
        }
        if k > 0 {
            let p = &records[k - 1];
            if r.context_switches_cum < p.context_switches_cum
                || r.expert_actions_cum < p.expert_actions_cum
                || r.dataset_size < p.dataset_size
                || (p.solved && !r.solved)
            {
                return Err(Error::Validation(format!(
                    "row {k}: cumulative field decreased"
                )));
            }
        }
    }
    Ok(())
}

/// Median and population standard deviation of novice-only episode rewards. Starts are
/// drawn from the start ball with per-episode seeds derived from `seed`.
pub fn evaluate_policy(
    system: &SystemSpec,
    policy: &dyn Policy,
    n_episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let tree = SeedTree::new(seed);
    let rewards = (0..n_episodes)
        .map(|i| {
            rollout(system, policy, None, tree.child("eval-episode", i as u64).master())
                .map(|t| t.episode_reward)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((median(&rewards), population_std(&rewards)))
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub(crate) fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchesUntilSolved {
    pub count: usize,
    pub solved: bool,
    /// First solved episode.
    pub episode: Option<usize>,
}

/// Cumulative context switches at the first solved episode, or the run total when the
/// run never solved.
pub fn context_switches_until_solved(metrics: &[MetricsRecord]) -> Result<SwitchesUntilSolved> {
    let last = metrics.last().ok_or(Error::EmptyBatch)?;
    Ok(match metrics.iter().find(|r| r.solved) {
        Some(r) => SwitchesUntilSolved {
            count: r.context_switches_cum,
            solved: true,
            episode: Some(r.episode),
        },
        None => SwitchesUntilSolved {
            count: last.context_switches_cum,
            solved: false,
            episode: None,
        },
    })
}
