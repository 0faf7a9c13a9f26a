use serde::{Deserialize, Serialize};

use crate::adarank::{RankPolicyState, DEFAULT_GAMMA, DEFAULT_ROUND_TO};
use crate::diagnostics::DiagnosticsMode;
use crate::error::{Error, Result};
use crate::optimizer::{Algorithm, WarmStart};
use crate::problems::ProblemSpec;

/// Algorithms selectable from a config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunAlgorithm {
    Dion,
    OrthDion,
    AdaOrthDion,
    ExactPolar,
    PolyakDion,
}

impl RunAlgorithm {
    /// The per-step update used by this algorithm.
    pub fn step_algorithm(self) -> Algorithm {
        match self {
            RunAlgorithm::Dion => Algorithm::Dion,
            RunAlgorithm::OrthDion | RunAlgorithm::AdaOrthDion => Algorithm::OrthDion,
            RunAlgorithm::ExactPolar => Algorithm::ExactPolar,
            RunAlgorithm::PolyakDion => Algorithm::PolyakDion,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RunAlgorithm::AdaOrthDion => "ada_orth_dion",
            other => other.step_algorithm().name(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaKind {
    Constant,
    /// `η = c / √T`
    InvSqrtT,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaSchedule {
    pub kind: EtaKind,
    pub c: f64,
}

impl EtaSchedule {
    pub fn eta(&self, steps: usize) -> f64 {
        match self.kind {
            EtaKind::Constant => self.c,
            EtaKind::InvSqrtT => self.c / (steps as f64).sqrt(),
        }
    }
}

fn default_alpha() -> f64 {
    0.1
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

fn default_round_to() -> usize {
    DEFAULT_ROUND_TO
}

fn default_cadence() -> usize {
    1
}

/// Seed values for the adaptive-rank policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankPolicyConfig {
    pub r_min: usize,
    pub r_max: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_round_to")]
    pub round_to: usize,
    /// Evaluate the policy every `cadence` steps.
    #[serde(default = "default_cadence")]
    pub cadence: usize,
    /// Stop adapting from this step on.
    #[serde(default)]
    pub freeze_after: Option<usize>,
}

impl RankPolicyConfig {
    pub fn initial_state(&self, r0: usize) -> Result<RankPolicyState> {
        Ok(RankPolicyState::new(r0, self.r_min, self.r_max, self.alpha, self.gamma)?
            .with_round_to(self.round_to))
    }
}

fn default_beta() -> f64 {
    1.0
}

/// One experiment, as read from a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub algorithm: RunAlgorithm,
    pub rank: usize,
    pub steps: usize,
    pub eta_schedule: EtaSchedule,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub rank_policy: Option<RankPolicyConfig>,
    #[serde(default)]
    pub diagnostics_mode: DiagnosticsMode,
    #[serde(default)]
    pub warm_start: WarmStart,
    #[serde(default)]
    pub seed: u64,
    /// Directory receiving `run.json` and `steps.csv`.
    #[serde(default)]
    pub output_path: Option<String>,
}

/// Momentum used by `polyak_dion` when the config leaves `mu` unset.
pub const DEFAULT_MU: f64 = 0.95;

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config {
            field: format!("line {} column {}", e.line(), e.column()),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn eta(&self) -> f64 {
        self.eta_schedule.eta(self.steps)
    }

    pub fn mu_or_default(&self) -> f64 {
        self.mu.unwrap_or(DEFAULT_MU)
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        let max_rank = self.problem.m.min(self.problem.n);
        if self.rank == 0 || self.rank > max_rank {
            return Err(Error::config(
                "rank",
                format!("{} must be in [1, {max_rank}]", self.rank),
            ));
        }
        if self.steps == 0 {
            return Err(Error::config("steps", "must be positive"));
        }
        let c = self.eta_schedule.c;
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::config("eta_schedule.c", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config("beta", format!("{} not in [0, 1]", self.beta)));
        }
        match (self.algorithm, self.mu) {
            (RunAlgorithm::PolyakDion, Some(mu)) if !(0.0..1.0).contains(&mu) => {
                return Err(Error::config("mu", format!("{mu} not in [0, 1)")));
            }
            (RunAlgorithm::PolyakDion, _) | (_, None) => {}
            (_, Some(_)) => {
                return Err(Error::config("mu", "only valid with algorithm polyak_dion"));
            }
        }
        match (&self.rank_policy, self.algorithm) {
            (Some(p), RunAlgorithm::AdaOrthDion) => {
                if p.r_max > max_rank {
                    return Err(Error::config(
                        "rank_policy.r_max",
                        format!("{} exceeds min(m, n) = {max_rank}", p.r_max),
                    ));
                }
                if p.cadence == 0 {
                    return Err(Error::config("rank_policy.cadence", "must be positive"));
                }
                p.initial_state(self.rank).map_err(|e| match e {
                    Error::Config { field, reason } => Error::Config { field, reason },
                    other => Error::config("rank_policy", other.to_string()),
                })?;
            }
            (None, RunAlgorithm::AdaOrthDion) => {
                return Err(Error::config("rank_policy", "required for ada_orth_dion"));
            }
            (Some(_), _) => {
                return Err(Error::config("rank_policy", "only valid with algorithm ada_orth_dion"));
            }
            (None, _) => {}
        }
        Ok(())
    }
}
