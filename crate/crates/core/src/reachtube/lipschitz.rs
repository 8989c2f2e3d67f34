use crate::envs::Trajectory;
use crate::error::{Error, Result};
use crate::sampling::distance;

/// Closed-loop traces started on the surface of the initial ball, measured against the
/// nominal trace from the ball center.
#[derive(Debug, Clone)]
pub struct SampleSet {
    dim: usize,
    gamma: f64,
    nominal: Vec<Vec<f64>>,
    initial: Vec<Vec<f64>>,
    traces: Vec<Vec<Vec<f64>>>,
    dists: Vec<Vec<f64>>,
    m_bar: Vec<f64>,
}

impl SampleSet {
    /// `gamma` sets the quantile used for the Lipschitz spread.
    pub fn new(nominal: Vec<Vec<f64>>, gamma: f64) -> Result<Self> {
        let dim = nominal.first().map(Vec::len).ok_or(Error::EmptyBatch)?;
        if nominal.iter().any(|s| s.len() != dim) {
            return Err(Error::Alignment("nominal trace has ragged states".into()));
        }
        let steps = nominal.len();
        Ok(SampleSet {
            dim,
            gamma,
            nominal,
            initial: Vec::new(),
            traces: Vec::new(),
            dists: Vec::new(),
            m_bar: vec![0.0; steps],
        })
    }

    /// Adds a trace; `initial` is its starting point on the sphere, which may live in a
    /// lower-dimensional space than the trace states when actions are appended.
    pub fn push(&mut self, initial: Vec<f64>, trace: Vec<Vec<f64>>) -> Result<()> {
        if trace.len() != self.nominal.len() {
            return Err(Error::Alignment(format!(
                "trace has {} steps, nominal has {}",
                trace.len(),
                self.nominal.len()
            )));
        }
        if let Some(bad) = trace.iter().find(|s| s.len() != self.dim) {
            return Err(Error::shape(self.dim, bad.len()));
        }
        let d: Vec<f64> = trace
            .iter()
            .zip(&self.nominal)
            .map(|(s, c)| distance(s, c))
            .collect();
        for (m, &v) in self.m_bar.iter_mut().zip(&d) {
            *m = m.max(v);
        }
        self.initial.push(initial);
        self.traces.push(trace);
        self.dists.push(d);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.nominal.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn nominal(&self) -> &[Vec<f64>] {
        &self.nominal
    }

    pub fn initial_points(&self) -> &[Vec<f64>] {
        &self.initial
    }

    /// `m̄_t`: the largest observed perturbation at step `t`.
    pub fn m_bar(&self, t: usize) -> f64 {
        self.m_bar[t]
    }

    /// `d_t(x)` for trace `i`.
    pub fn distance(&self, i: usize, t: usize) -> f64 {
        self.dists[i][t]
    }

    /// Recomputes every `m̄_t` from the stored distances.
    pub fn recompute_m_bar(&mut self) {
        for (t, m) in self.m_bar.iter_mut().enumerate() {
            *m = self.dists.iter().map(|d| d[t]).fold(0.0, f64::max);
        }
    }

    /// All trace states at step `t`, concatenated.
    pub(crate) fn states_at(&self, t: usize) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.len() * self.dim);
        for trace in &self.traces {
            flat.extend_from_slice(&trace[t]);
        }
        flat
    }
}

/// `d_t(x) = |χ(t, x) - χ(t, x0)|`.
pub fn perturbation_distance(trace: &Trajectory, nominal: &Trajectory, t: usize) -> Result<f64> {
    if trace.times != nominal.times {
        return Err(Error::Alignment(format!(
            "time grids differ ({} vs {} samples)",
            trace.times.len(),
            nominal.times.len()
        )));
    }
    let (Some(a), Some(b)) = (trace.states.get(t), nominal.states.get(t)) else {
        return Err(Error::Alignment(format!(
            "step {t} outside a trace of {} states",
            trace.states.len()
        )));
    };
    if a.len() != b.len() {
        return Err(Error::shape(b.len(), a.len()));
    }
    Ok(distance(a, b))
}

/// Local Lipschitz statistic at step `t`: the mean of the expansion ratios
/// `d_t(x) / d_0(x)` and the gap between their `(1 - gamma)` quantile and that mean.
///
/// Traces that start on the nominal point carry no ratio and are skipped.
pub fn estimate_local_lipschitz(set: &SampleSet, t: usize) -> Result<(f64, f64)> {
    let mut ratios = Vec::with_capacity(set.len());
    expansion_ratios(set, t, &mut ratios);
    lipschitz_from_ratios(&mut ratios, set.gamma)
}

pub(crate) fn expansion_ratios(set: &SampleSet, t: usize, out: &mut Vec<f64>) {
    out.clear();
    for d in &set.dists {
        if d[0] > 0.0 {
            out.push(d[t] / d[0]);
        }
    }
}

pub(crate) fn lipschitz_from_ratios(ratios: &mut [f64], gamma: f64) -> Result<(f64, f64)> {
    if ratios.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: ratios.len(),
        });
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    ratios.sort_by(f64::total_cmp);
    let q = quantile_sorted(ratios, 1.0 - gamma);
    Ok((mean, (q - mean).max(0.0)))
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Radius of the stochastic cap around a sampled initial point.
///
/// Positive root of `Δλ r² + λ r = μ m̄ - d`, evaluated in the cancellation-free form
/// `2 s / (λ + sqrt(λ² + 4 Δλ s))`, which reduces to `s / λ` as `Δλ → 0`.
/// `λ = Δλ = 0` with positive slack is reported as [`Error::DegenerateCap`].
pub fn cap_radius(lambda: f64, delta_lambda: f64, mu: f64, m_bar: f64, d: f64) -> Result<f64> {
    let slack = mu * m_bar - d;
    if slack < 0.0 {
        return Err(Error::CapUnderflow { slack });
    }
    if lambda < 0.0 || delta_lambda < 0.0 {
        return Err(Error::Validation(format!(
            "negative Lipschitz estimate (lambda={lambda}, delta_lambda={delta_lambda})"
        )));
    }
    if slack == 0.0 {
        return Ok(0.0);
    }
    if lambda == 0.0 && delta_lambda == 0.0 {
        return Err(Error::DegenerateCap);
    }
    Ok(2.0 * slack / (lambda + (lambda * lambda + 4.0 * delta_lambda * slack).sqrt()))
}
