use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{flow_trace, solved_rollouts, SystemSpec};
use crate::error::{Error, Result};
use crate::policies::{ExpertPolicy, Policy};
use crate::reachtube::coverage::CoverageIndex;
use crate::reachtube::lipschitz::{expansion_ratios, lipschitz_from_ratios};
use crate::reachtube::slice::fit_slice_flat;
use crate::reachtube::{
    cap_radius, sample_initial_surface, ReachTube, SampleSet, TubeConfig, TubeSource,
};
use crate::rng::SeedTree;

/// Seeded rollouts an expert must solve before a tube is built around it.
pub const COMPETENCE_ROLLOUTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub batches: usize,
    /// Effective number of sampled traces `|V|`.
    pub traces: usize,
    /// Smallest estimated surface coverage over the checked steps.
    pub coverage: f64,
    pub coverage_target: f64,
    /// Step where the smallest coverage occurred.
    pub worst_step: usize,
    pub underflow_retries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TubeBuild {
    pub tube: ReachTube,
    pub report: BuildReport,
}

/// Builds a tube around `expert` after checking that it solves the environment on
/// [`COMPETENCE_ROLLOUTS`] seeded episodes.
pub fn build_tube(
    system: &SystemSpec,
    expert: &ExpertPolicy,
    config: &TubeConfig,
    rng_seed: u64,
) -> Result<TubeBuild> {
    let solved = solved_rollouts(system, expert, COMPETENCE_ROLLOUTS, rng_seed)?;
    if solved < COMPETENCE_ROLLOUTS {
        return Err(Error::Validation(format!(
            "expert {} solved only {solved}/{COMPETENCE_ROLLOUTS} episodes of {}",
            expert.kind.as_str(),
            system.id
        )));
    }
    build_tube_for(system, expert, expert.kind.as_str(), config, rng_seed)
}

/// Builds a tube around an arbitrary closed-loop policy.
///
/// On [`Error::CoverageNotReached`] the error carries the tube fit from every trace
/// sampled so far.
pub fn build_tube_for(
    system: &SystemSpec,
    policy: &dyn Policy,
    name: &str,
    config: &TubeConfig,
    rng_seed: u64,
) -> Result<TubeBuild> {
    config.validate()?;
    system.validate()?;
    let seeds = SeedTree::new(rng_seed);
    let nominal = closed_loop_trace(system, policy, &system.x0, config.include_action)?;
    let mut set = SampleSet::new(nominal, config.gamma)?;
    let probes = sample_initial_surface(
        &system.x0,
        config.initial_radius,
        config.coverage_samples,
        &mut seeds.stream("tube-coverage"),
    )?;
    let target = 1.0 - config.gamma;
    let mut report = BuildReport {
        batches: 0,
        traces: 0,
        coverage: 0.0,
        coverage_target: target,
        worst_step: 0,
        underflow_retries: 0,
    };

    for batch in 0..config.max_batches {
        let starts = sample_initial_surface(
            &system.x0,
            config.initial_radius,
            config.batch_size,
            &mut seeds.indexed("tube-initial", batch as u64),
        )?;
        let traces: Vec<Vec<Vec<f64>>> = starts
            .par_iter()
            .map(|x| closed_loop_trace(system, policy, x, config.include_action))
            .collect::<Result<_>>()?;
        for (x, trace) in starts.into_iter().zip(traces) {
            set.push(x, trace)?;
        }
        let index = CoverageIndex::new(&probes, set.initial_points());
        let (coverage, worst_step) = match coverage_profile(&set, &index, config.mu) {
            Err(Error::CapUnderflow { .. }) => {
                report.underflow_retries += 1;
                set.recompute_m_bar();
                coverage_profile(&set, &index, config.mu)?
            }
            other => other?,
        };
        report.batches = batch + 1;
        report.traces = set.len();
        report.coverage = coverage;
        report.worst_step = worst_step;
        log::info!(
            "batch {}: {} traces, min coverage {coverage:.4} at step {worst_step}",
            batch + 1,
            set.len()
        );
        if coverage >= target {
            break;
        }
    }

    let tube = fit_tube(system, &set, config, name, rng_seed)?;
    if report.coverage < target {
        return Err(Error::CoverageNotReached {
            coverage: report.coverage,
            target,
            batches: report.batches,
            traces: report.traces,
            partial: Box::new(TubeBuild { tube, report }),
        });
    }
    Ok(TubeBuild { tube, report })
}

fn closed_loop_trace(
    system: &SystemSpec,
    policy: &dyn Policy,
    x: &[f64],
    include_action: bool,
) -> Result<Vec<Vec<f64>>> {
    let states = flow_trace(system, x, policy)?;
    if !include_action {
        return Ok(states);
    }
    states
        .into_iter()
        .map(|mut s| {
            let a = system.clamp_action(&policy.act(&s)?);
            s.extend(a);
            Ok(s)
        })
        .collect()
}

/// Smallest cap coverage over steps `1..=T`, and the step where it occurs.
///
/// Step 0 is skipped: its slice is fit to the initial sphere itself, so it bounds every
/// start state without relying on the caps.
fn coverage_profile(set: &SampleSet, index: &CoverageIndex, mu: f64) -> Result<(f64, usize)> {
    let mut ratios = Vec::with_capacity(set.len());
    let mut radii = vec![0.0; set.len()];
    let mut worst: Option<(f64, usize)> = None;
    for t in 1..set.steps() {
        expansion_ratios(set, t, &mut ratios);
        let (lambda, delta) = lipschitz_from_ratios(&mut ratios, set.gamma())?;
        let m_bar = set.m_bar(t);
        for (i, r) in radii.iter_mut().enumerate() {
            *r = match cap_radius(lambda, delta, mu, m_bar, set.distance(i, t)) {
                Err(Error::DegenerateCap) => f64::INFINITY,
                other => other?,
            };
        }
        let cov = index.covered_fraction(&radii);
        if worst.is_none_or(|(w, _)| cov < w) {
            worst = Some((cov, t));
        }
    }
    Ok(worst.unwrap_or((1.0, 0)))
}

fn fit_tube(
    system: &SystemSpec,
    set: &SampleSet,
    config: &TubeConfig,
    name: &str,
    seed: u64,
) -> Result<ReachTube> {
    let slices = (0..set.steps())
        .map(|t| {
            fit_slice_flat(
                &set.states_at(t),
                &set.nominal()[t],
                config.mu,
                config.initial_radius,
                t as f64 * system.dt,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReachTube {
        gamma: config.gamma,
        mu: config.mu,
        source: TubeSource {
            system: system.id,
            expert: name.to_string(),
            seed,
            includes_action: config.include_action,
        },
        slices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::ConstantPolicy;

    fn small_config() -> TubeConfig {
        TubeConfig {
            batch_size: 32,
            max_batches: 2,
            coverage_samples: 500,
            ..TubeConfig::default()
        }
    }

    #[test]
    fn nominal_trace_sits_on_centers() {
        let sys = SystemSpec::linear_decay(2, 0.1, 20);
        let build = build_tube_for(&sys, &ConstantPolicy::zeros(2), "zero", &small_config(), 1)
            .unwrap();
        let nominal = flow_trace(&sys, &sys.x0, &ConstantPolicy::zeros(2)).unwrap();
        for (k, s) in nominal.iter().enumerate() {
            assert_eq!(build.tube.membership(k, s).unwrap(), 0.0);
        }
    }

    #[test]
    fn build_traces_are_mu_inside() {
        let sys = SystemSpec::linear_decay(2, 0.1, 20);
        let cfg = small_config();
        let policy = ConstantPolicy::zeros(2);
        let seeds = SeedTree::new(4);
        let build = build_tube_for(&sys, &policy, "zero", &cfg, 4).unwrap();
        for batch in 0..build.report.batches {
            let starts = sample_initial_surface(
                &sys.x0,
                cfg.initial_radius,
                cfg.batch_size,
                &mut seeds.indexed("tube-initial", batch as u64),
            )
            .unwrap();
            for x in starts {
                let trace = flow_trace(&sys, &x, &policy).unwrap();
                for (k, s) in trace.iter().enumerate() {
                    let rho = build.tube.membership(k, s).unwrap();
                    assert!(rho <= 1.0 / cfg.mu + 1e-12, "step {k}: {rho}");
                }
            }
        }
    }
}
