//! Run configuration: a single human-editable TOML document with
//! environment-variable overrides for secrets.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{EngineConfig, OperatorKind, OperatorSchedule};
use crate::landscape::{EconomicParams, GeneratorConfig};
use crate::llm::{MechanismKind, PersonaKind};
use crate::sandbox::{ExecLimits, Sandbox};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Epsilon of the error-to-fitness transform.
    pub epsilon: f64,
    pub landscape: LandscapeConfig,
    pub ea: EaConfig,
    pub sandbox: SandboxConfig,
    pub provider: ProviderConfig,
    pub ground_truth: GroundTruthConfig,
    pub nudge: NudgeConfig,
    pub economics: EconomicParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            epsilon: 1e-6,
            landscape: LandscapeConfig::default(),
            ea: EaConfig::default(),
            sandbox: SandboxConfig::default(),
            provider: ProviderConfig::default(),
            ground_truth: GroundTruthConfig::default(),
            nudge: NudgeConfig::default(),
            economics: EconomicParams::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LandscapeConfig {
    pub n_farms: u32,
    pub plots_per_farm: u32,
    pub ag_probability: f64,
    /// Boundary rectangle extent in metres.
    pub extent: (f64, f64),
    /// Margin strip width in metres when realizing directions.
    pub margin_width: f64,
    /// Fraction above which a quadrant counts as an intervention direction.
    pub direction_threshold: f64,
    /// Patches within this distance (metres) count as connected.
    pub adjacency_buffer: f64,
    /// Neighbor exemplars supplied for in-context learning.
    pub icl_neighbors: usize,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        LandscapeConfig {
            n_farms: 5,
            plots_per_farm: 9,
            ag_probability: 0.6,
            extent: (1000.0, 1000.0),
            margin_width: 10.0,
            direction_threshold: 0.1,
            adjacency_buffer: 0.0,
            icl_neighbors: 2,
        }
    }
}

impl LandscapeConfig {
    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            n_farms: self.n_farms,
            plots_per_farm: self.plots_per_farm,
            ag_probability: self.ag_probability,
            extent: self.extent,
            ..GeneratorConfig::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EaConfig {
    pub population: usize,
    pub generations: u32,
    pub elitism: usize,
    /// Defaults to the population size when zero.
    pub offspring: usize,
    pub workers: usize,
    pub reflect_once_per_generation: bool,
    pub operator_weights: OperatorWeights,
}

impl Default for EaConfig {
    fn default() -> Self {
        EaConfig {
            population: 25,
            generations: 25,
            elitism: 2,
            offspring: 0,
            workers: 4,
            reflect_once_per_generation: true,
            operator_weights: OperatorWeights::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorWeights {
    pub mutate: f64,
    pub crossover: f64,
    pub explore_diverge: f64,
    pub explore_converge: f64,
    pub reflect: f64,
}

impl Default for OperatorWeights {
    fn default() -> Self {
        OperatorWeights {
            mutate: 1.0,
            crossover: 1.0,
            explore_diverge: 1.0,
            explore_converge: 1.0,
            reflect: 1.0,
        }
    }
}

impl EaConfig {
    pub fn engine_config(&self, seed: u64) -> EngineConfig {
        let schedule = OperatorSchedule {
            weights: vec![
                (OperatorKind::Mutate, self.operator_weights.mutate),
                (OperatorKind::Crossover, self.operator_weights.crossover),
                (OperatorKind::ExploreDiverge, self.operator_weights.explore_diverge),
                (OperatorKind::ExploreConverge, self.operator_weights.explore_converge),
                (OperatorKind::Reflect, self.operator_weights.reflect),
            ],
            reflect_once_per_generation: self.reflect_once_per_generation,
        };
        EngineConfig {
            population_size: self.population,
            generations: self.generations,
            elitism_k: self.elitism,
            offspring_per_generation: if self.offspring == 0 {
                self.population
            } else {
                self.offspring
            },
            schedule,
            seed,
            workers: self.workers,
            ..EngineConfig::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxConfig {
    pub interpreter: String,
    pub timeout_secs: f64,
    pub memory_mib: u64,
    pub max_fix_attempts: u32,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig {
            interpreter: "python3".to_string(),
            timeout_secs: 30.0,
            memory_mib: 512,
            max_fix_attempts: 1,
        }
    }
}

impl SandboxConfig {
    pub fn sandbox(&self) -> Sandbox {
        Sandbox::new(
            self.interpreter.clone(),
            ExecLimits {
                timeout: Duration::from_secs_f64(self.timeout_secs),
                memory_bytes: self.memory_mib * 1024 * 1024,
            },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    /// Deterministic offline provider; no network.
    Synthetic,
    /// Replay (optionally record) content-addressed responses on disk.
    Cassette,
    /// OpenAI-compatible chat-completions endpoint.
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Cassette directory, relative to the run dir unless absolute.
    pub cassette_dir: String,
    /// Record misses through the http provider when replaying cassettes.
    pub record: bool,
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: Option<f64>,
    pub request_timeout_secs: f64,
    pub max_retries: u32,
    /// Calls per second; 0 disables rate limiting.
    pub rate_limit_per_sec: f64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Synthetic,
            cassette_dir: "cassettes".to_string(),
            record: false,
            endpoint: String::new(),
            model: String::new(),
            api_key_env: "LLM_API_KEY".to_string(),
            temperature: None,
            request_timeout_secs: 120.0,
            max_retries: 3,
            rate_limit_per_sec: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundTruthKind {
    Builtin,
    Command,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundTruthConfig {
    pub kind: GroundTruthKind,
    /// External solver invocation (program plus arguments).
    pub command: Vec<String>,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        GroundTruthConfig {
            kind: GroundTruthKind::Builtin,
            command: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NudgeConfig {
    pub personas: Vec<PersonaKind>,
    pub mechanisms: Vec<MechanismKind>,
    pub budget_per_farm: f64,
    pub pv_factor: f64,
    /// Explanation pipeline group size.
    pub explain_group_size: usize,
}

impl Default for NudgeConfig {
    fn default() -> Self {
        NudgeConfig {
            personas: PersonaKind::ALL.to_vec(),
            mechanisms: MechanismKind::ALL.to_vec(),
            budget_per_farm: 10_000.0,
            pv_factor: 12.46,
            explain_group_size: 3,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        self.landscape.generator_config().validate()?;
        self.ea.engine_config(self.seed).validate()?;
        self.economics.validate()?;
        if !(0.0..1.0).contains(&self.landscape.direction_threshold)
            || self.landscape.direction_threshold == 0.0
        {
            return Err(Error::Config(
                "landscape.direction_threshold must lie in (0, 1)".into(),
            ));
        }
        if self.landscape.margin_width <= 0.0 {
            return Err(Error::Config("landscape.margin_width must be positive".into()));
        }
        if self.sandbox.timeout_secs <= 0.0 {
            return Err(Error::Config("sandbox.timeout_secs must be positive".into()));
        }
        if self.nudge.personas.is_empty() || self.nudge.mechanisms.is_empty() {
            return Err(Error::Config(
                "nudge.personas and nudge.mechanisms must not be empty".into(),
            ));
        }
        if self.nudge.explain_group_size == 0 {
            return Err(Error::Config("nudge.explain_group_size must be positive".into()));
        }
        match self.provider.kind {
            ProviderKind::Http if self.provider.endpoint.is_empty() => Err(Error::Config(
                "provider.endpoint is required for the http provider".into(),
            )),
            ProviderKind::Cassette if self.provider.record && self.provider.endpoint.is_empty() => {
                Err(Error::Config(
                    "provider.endpoint is required to record cassettes".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_roundtrips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let toml_text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&toml_text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.nudge.personas.len(), 3);
        assert_eq!(back.nudge.mechanisms.len(), 2);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 42\n[ea]\npopulation = 4\n").unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.ea.population, 4);
        assert_eq!(cfg.ea.generations, 25);
        assert_eq!(cfg.landscape.n_farms, 5);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = RunConfig::default();
        cfg.epsilon = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.landscape.direction_threshold = 1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.provider.kind = ProviderKind::Http;
        assert!(cfg.validate().is_err());
    }
}
