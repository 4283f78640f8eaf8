//! TOML configuration shared by the CLI and embedding layers.
//!
//! Every field has a default, so an empty file (or no file) is valid.
//! Unknown keys are rejected to catch typos early. The `MNEMO_CONFIG`
//! environment variable names a file to load when no explicit path is
//! given.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingProvider, DEFAULT_DIMENSION};
use crate::error::{Error, Result};
use crate::memory::RetrievalStrategy;
use crate::optim::ClipSchedule;
use crate::reward::RewardWeights;
use crate::sim::RunConfig;

pub const CONFIG_ENV_VAR: &str = "MNEMO_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    /// `hashing` or `remote`.
    pub kind: String,
    pub endpoint: Option<String>,
    pub timeout_secs: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: "hashing".to_owned(),
            endpoint: None,
            timeout_secs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryConfig {
    pub horizon: u32,
    pub top_k: usize,
    pub lambda: f64,
    pub strategy: RetrievalStrategy,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            top_k: 3,
            lambda: 0.5,
            strategy: RetrievalStrategy::TopK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub format_weight: f64,
    pub accuracy_weight: f64,
    pub action_type_weight: f64,
    pub parameter_weight: f64,
    pub iou_threshold: f64,
    pub math_tol: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        let w = RewardWeights::default();
        Self {
            format_weight: w.format,
            accuracy_weight: w.accuracy,
            action_type_weight: w.action_type,
            parameter_weight: w.parameter,
            iou_threshold: w.iou_threshold,
            math_tol: crate::reward::DEFAULT_MATH_TOL,
        }
    }
}

impl RewardConfig {
    pub fn weights(&self) -> Result<RewardWeights> {
        let w = RewardWeights {
            format: self.format_weight,
            accuracy: self.accuracy_weight,
            action_type: self.action_type_weight,
            parameter: self.parameter_weight,
            iou_threshold: self.iou_threshold,
        };
        w.validate()?;
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub eps_low: f64,
    pub eps_init: f64,
    pub eps_end: f64,
    pub beta: f64,
    pub total_steps: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            eps_low: 0.2,
            eps_init: 0.4,
            eps_end: 0.2,
            beta: 0.04,
            total_steps: 100,
        }
    }
}

impl OptimizerConfig {
    pub fn schedule(&self, total_steps: u64) -> Result<ClipSchedule> {
        ClipSchedule::new(self.eps_low, self.eps_init, self.eps_end, total_steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_ground: usize,
    pub n_evolve: usize,
    pub min_steps: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_ground: 2000,
            n_evolve: 2000,
            min_steps: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub failure_cap: u32,
    pub episodes: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            failure_cap: 5,
            episodes: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub dimension: Option<usize>,
    pub provider: ProviderConfig,
    pub memory: MemoryConfig,
    pub rewards: RewardConfig,
    pub optimizer: OptimizerConfig,
    pub data: DataConfig,
    pub sim: SimConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Config =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Loads `path` when given, else the `MNEMO_CONFIG` file when set,
    /// else defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_path(p),
            None => match std::env::var_os(CONFIG_ENV_VAR) {
                Some(p) => Self::from_path(Path::new(&p)),
                None => Ok(Self::default()),
            },
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension.unwrap_or(DEFAULT_DIMENSION)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension() == 0 {
            return Err(Error::InvalidConfig("dimension must be positive".into()));
        }
        match self.provider.kind.as_str() {
            "hashing" => {}
            "remote" => {
                if self.provider.endpoint.is_none() {
                    return Err(Error::InvalidConfig(
                        "remote provider needs an endpoint".into(),
                    ));
                }
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown provider kind `{other}`"
                )))
            }
        }
        if !self.memory.lambda.is_finite() || !(0.0..=1.0).contains(&self.memory.lambda) {
            return Err(Error::InvalidLambda(self.memory.lambda));
        }
        self.rewards.weights()?;
        if !self.rewards.math_tol.is_finite() || self.rewards.math_tol < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "math tolerance {} must be a finite non-negative number",
                self.rewards.math_tol
            )));
        }
        self.optimizer.schedule(self.optimizer.total_steps.max(1))?;
        Ok(())
    }

    pub fn provider(&self) -> Result<EmbeddingProvider> {
        let dim = self.dimension();
        match self.provider.kind.as_str() {
            "hashing" => EmbeddingProvider::hashing(dim),
            "remote" => {
                let endpoint = self.provider.endpoint.as_deref().ok_or_else(|| {
                    Error::InvalidConfig("remote provider needs an endpoint".into())
                })?;
                EmbeddingProvider::remote(
                    endpoint,
                    dim,
                    std::time::Duration::from_secs(self.provider.timeout_secs),
                )
            }
            other => Err(Error::InvalidConfig(format!(
                "unknown provider kind `{other}`"
            ))),
        }
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            horizon: self.memory.horizon,
            top_k: self.memory.top_k,
            lambda: self.memory.lambda,
            strategy: self.memory.strategy,
            failure_cap: self.sim.failure_cap,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_all_defaults() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.dimension(), DEFAULT_DIMENSION);
        assert_eq!(c.memory.top_k, 3);
        assert_eq!(c.optimizer.beta, 0.04);
        assert_eq!(c.data.n_ground, 2000);
        assert_eq!(c.sim.failure_cap, 5);
    }

    #[test]
    fn partial_sections_override_only_named_fields() {
        let c = Config::from_toml(
            "dimension = 64\n\n[memory]\nlambda = 0.25\n\n[optimizer]\nbeta = 0.0\n",
        )
        .unwrap();
        assert_eq!(c.dimension(), 64);
        assert_eq!(c.memory.lambda, 0.25);
        assert_eq!(c.memory.horizon, 5);
        assert_eq!(c.optimizer.beta, 0.0);
        assert_eq!(c.optimizer.eps_init, 0.4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            Config::from_toml("[memory]\nhorzon = 5\n"),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            Config::from_toml("nope = 1\n"),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(matches!(
            Config::from_toml("[memory]\nlambda = 1.5\n"),
            Err(Error::InvalidLambda(_))
        ));
        assert!(Config::from_toml("[provider]\nkind = \"remote\"\n").is_err());
        assert!(Config::from_toml("[provider]\nkind = \"other\"\n").is_err());
        assert!(Config::from_toml("[rewards]\nformat_weight = 0.3\n").is_err());
        assert!(Config::from_toml("[optimizer]\neps_low = 1.0\n").is_err());
    }

    #[test]
    fn strategy_round_trips_through_toml() {
        let c = Config::from_toml("[memory]\nstrategy = \"success_only\"\n").unwrap();
        assert_eq!(c.memory.strategy, RetrievalStrategy::SuccessOnly);
        let text = toml::to_string(&c).unwrap();
        let back = Config::from_toml(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn provider_construction_matches_kind() {
        let c = Config::from_toml("dimension = 32\n").unwrap();
        let p = c.provider().unwrap();
        assert_eq!(p.dim(), 32);
        assert_eq!(p.kind_name(), "hashing");
        let c = Config::from_toml(
            "[provider]\nkind = \"remote\"\nendpoint = \"http://127.0.0.1:1\"\n",
        )
        .unwrap();
        let p = c.provider().unwrap();
        assert_eq!(p.kind_name(), "remote");
    }

    #[test]
    fn run_config_mirrors_sections() {
        let c = Config::from_toml("[memory]\nhorizon = 9\n\n[sim]\nfailure_cap = 2\n").unwrap();
        let rc = c.run_config();
        assert_eq!(rc.horizon, 9);
        assert_eq!(rc.failure_cap, 2);
        assert_eq!(rc.top_k, 3);
    }
}
