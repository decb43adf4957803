//! Experiment orchestration: configuration, per-iteration CSV runs,
//! multi-algorithm comparisons and the certification suites behind
//! `frppo verify`.

pub mod compare;
pub mod instances;
pub mod oracle;
pub mod run;
pub mod verify;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::fr_ppo::SolverConfig;
use crate::surrogates::DEFAULT_EPS_CLIP;

pub use compare::{cmd_compare, CompareReport};
pub use run::{cmd_run, run_trial, TrialRow, CSV_HEADER};
pub use verify::{cmd_verify, Suite, SuiteReport};

/// Projected-gradient steps per PPO-clip outer iteration.
pub const PPO_CLIP_INNER_ITERS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "fr-ppo")]
    FrPpo,
    #[serde(rename = "kl-md")]
    KlMd,
    #[serde(rename = "ppo-clip")]
    PpoClip,
    #[serde(rename = "parametrized-fr")]
    ParametrizedFr,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::FrPpo => "fr-ppo",
            Algorithm::KlMd => "kl-md",
            Algorithm::PpoClip => "ppo-clip",
            Algorithm::ParametrizedFr => "parametrized-fr",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fr-ppo" => Ok(Algorithm::FrPpo),
            "kl-md" => Ok(Algorithm::KlMd),
            "ppo-clip" => Ok(Algorithm::PpoClip),
            "parametrized-fr" => Ok(Algorithm::ParametrizedFr),
            other => Err(Error::InvalidParameter(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub algorithm: Algorithm,
    pub solver: SolverConfig,
    pub output_path: PathBuf,
    pub trials: usize,
    pub eps_clip: f64,
    /// Algorithms for `compare`.
    pub algorithms: Vec<Algorithm>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvSpec::default(),
            algorithm: Algorithm::FrPpo,
            solver: SolverConfig::default(),
            output_path: PathBuf::from("frppo_run.csv"),
            trials: 1,
            eps_clip: DEFAULT_EPS_CLIP,
            algorithms: vec![Algorithm::FrPpo, Algorithm::KlMd],
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn check(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        if !(self.eps_clip > 0.0 && self.eps_clip < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "eps_clip must lie in (0, 1), got {}",
                self.eps_clip
            )));
        }
        Ok(())
    }
}

/// `{:.16e}`: 17 significant digits, enough to round-trip any double.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
