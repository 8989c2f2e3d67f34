use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dagger::TrainConfig;
use crate::envs::{SystemId, SystemSpec};
use crate::error::{Error, Result};
use crate::gating::{DoubtGateConfig, TubeGateConfig, VarianceGateConfig};
use crate::reachtube::TubeConfig;

/// Master-seed fallback when neither a flag nor the config file names one.
pub const SEED_ENV: &str = "TUBEDAGGER_SEED";

/// Share of the action-space diameter above which the novice counts as deviating.
pub const DEFAULT_TAU_M_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Tubedagger,
    Lazydagger,
    Ensembledagger,
    Bc,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Tubedagger => "tubedagger",
            Algorithm::Lazydagger => "lazydagger",
            Algorithm::Ensembledagger => "ensembledagger",
            Algorithm::Bc => "bc",
        }
    }

    /// Thresholds used when neither the config nor the flags set any.
    pub fn default_pair(&self) -> ThresholdPair {
        match self {
            Algorithm::Tubedagger => ThresholdPair::new(0.2, 0.7),
            Algorithm::Lazydagger => ThresholdPair::new(0.1, 0.5),
            Algorithm::Ensembledagger => ThresholdPair::new(0.001, 0.005),
            Algorithm::Bc => ThresholdPair::new(0.0, 0.0),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Lower and upper gate thresholds, written `LOW,HIGH` on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub low: f64,
    pub high: f64,
}

impl ThresholdPair {
    pub fn new(low: f64, high: f64) -> Self {
        ThresholdPair { low, high }
    }

    /// Rejects pairs that do not satisfy `low < high`.
    pub fn strict(&self) -> Result<()> {
        if self.low.is_finite() && self.high.is_finite() && self.low >= 0.0 && self.low < self.high
        {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid threshold pair ({}, {}): need 0 <= beta_minus < beta_plus",
                self.low, self.high
            )))
        }
    }

    /// Directory-safe label such as `0.2_0.7`.
    pub fn label(&self) -> String {
        format!("{}_{}", self.low, self.high)
    }
}

impl fmt::Display for ThresholdPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.low, self.high)
    }
}

impl FromStr for ThresholdPair {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (lo, hi) = s
            .split_once([',', ':'])
            .ok_or_else(|| format!("expected LOW,HIGH, got `{s}`"))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad threshold `{}`: {e}", v.trim()))
        };
        Ok(ThresholdPair::new(parse(lo)?, parse(hi)?))
    }
}

/// The single JSON document read by `--config`. Every field may be overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: Option<SystemId>,
    pub algorithm: Option<Algorithm>,
    pub gate: Option<ThresholdPair>,
    /// Sweep grid of threshold pairs.
    pub grid: Vec<ThresholdPair>,
    /// Doubt-label distance for LazyDAgger; defaults to a tenth of the action diameter.
    pub tau_m: Option<f64>,
    pub tube: Option<PathBuf>,
    pub tube_build: TubeConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Demonstrations for the behavioral-cloning baseline.
    pub n_demos: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: None,
            algorithm: None,
            gate: None,
            grid: Vec::new(),
            tau_m: None,
            tube: None,
            tube_build: TubeConfig::default(),
            train: TrainConfig::default(),
            seeds: Vec::new(),
            n_demos: 20,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    pub fn system(&self) -> Result<SystemSpec> {
        let id = self
            .env
            .ok_or_else(|| Error::Config("no environment given (use --env)".into()))?;
        if !SystemId::CLI_IDS.contains(&id) {
            return Err(Error::Config(format!("environment `{id}` is not available here")));
        }
        Ok(SystemSpec::builtin(id))
    }

    pub fn algorithm(&self) -> Result<Algorithm> {
        self.algorithm
            .ok_or_else(|| Error::Config("no algorithm given (use --algorithm)".into()))
    }

    /// Flags first, then the config file, then [`SEED_ENV`], then seed 0.
    pub fn resolve_seeds(&mut self, flags: &[u64]) -> Result<()> {
        if !flags.is_empty() {
            self.seeds = flags.to_vec();
        } else if self.seeds.is_empty() {
            self.seeds = vec![env_seed()?.unwrap_or(0)];
        }
        Ok(())
    }
}

/// Reads [`SEED_ENV`] if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| Error::Config(format!("{SEED_ENV}=`{v}` is not a seed: {e}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("{SEED_ENV}: {e}"))),
    }
}

/// Gate thresholds bound to an algorithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateSpec {
    Tube(TubeGateConfig),
    Doubt(DoubtGateConfig),
    Variance(VarianceGateConfig),
    None,
}

impl GateSpec {
    /// `strict` rejects equal thresholds, which single runs accept: `(0, 0)` for the
    /// tube gate reduces to behavioral cloning and `tau_low = tau_high` gives a
    /// single-threshold doubt gate.
    pub fn new(
        algorithm: Algorithm,
        pair: ThresholdPair,
        tau_m: f64,
        strict: bool,
    ) -> Result<Self> {
        if strict {
            pair.strict()?;
        }
        Ok(match algorithm {
            Algorithm::Tubedagger => GateSpec::Tube(TubeGateConfig::from_pair(pair.low, pair.high)?),
            Algorithm::Lazydagger if pair.low == pair.high => {
                GateSpec::Doubt(DoubtGateConfig::single_threshold(pair.high, tau_m)?)
            }
            Algorithm::Lazydagger => GateSpec::Doubt(DoubtGateConfig::new(pair.low, pair.high, tau_m)?),
            Algorithm::Ensembledagger => {
                GateSpec::Variance(VarianceGateConfig::new(pair.low, pair.high)?)
            }
            Algorithm::Bc => GateSpec::None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_parsing() {
        let p: ThresholdPair = "0.2,0.7".parse().unwrap();
        assert_eq!(p, ThresholdPair::new(0.2, 0.7));
        assert_eq!("0.5:1".parse::<ThresholdPair>().unwrap().high, 1.0);
        assert!("0.5".parse::<ThresholdPair>().is_err());
        assert!("a,1".parse::<ThresholdPair>().is_err());
    }

    #[test]
    fn strict_pair_names_the_constraint() {
        let err = ThresholdPair::new(0.7, 0.2).strict().unwrap_err().to_string();
        assert!(err.contains("beta_minus < beta_plus"), "{err}");
        assert!(ThresholdPair::new(0.0, 0.0).strict().is_err());
    }

    #[test]
    fn config_rejects_unknown_fields() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"envv": "vanderpol"}"#).is_err());
        let cfg: RunConfig =
            serde_json::from_str(r#"{"env": "vanderpol", "train": {"episodes": 3}}"#).unwrap();
        assert_eq!(cfg.env, Some(SystemId::Vanderpol));
        assert_eq!(cfg.train.episodes, 3);
        assert_eq!(cfg.n_demos, 20);
    }

    #[test]
    fn degenerate_tube_pair_only_outside_sweeps() {
        let p = ThresholdPair::new(0.0, 0.0);
        assert!(GateSpec::new(Algorithm::Tubedagger, p, 0.1, false).is_ok());
        assert!(GateSpec::new(Algorithm::Tubedagger, p, 0.1, true).is_err());
    }
}
