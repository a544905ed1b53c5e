//! Experiment configuration: a flat TOML table merged over defaults.

use std::path::Path;

use cgr_core::agents::{TargetUpdate, DEFAULT_HIDDEN, EPSILON_DECAY, EPSILON_MIN, EPSILON_START};
use cgr_core::buffers::DEFAULT_CAPACITY;
use cgr_core::confidence::{
    ConstantReading, EntropyMode, Regularizer, DEFAULT_NU_EXPONENTIAL, DEFAULT_NU_HYPERBOLIC,
    DEFAULT_THRESHOLD,
};
use cgr_core::envs::{BitFlip, Environment, KeyLock, Parking, ParkingParams};
use cgr_core::reward_model::{Imputation, DEFAULT_REWARD_HIDDEN};
use cgr_core::trainer::{AgentKind, TrainerConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvId {
    Keylock,
    KeylockSmall,
    Parking,
    Bitflip,
}

impl EnvId {
    pub fn goal_conditioned(&self) -> bool {
        matches!(self, EnvId::Parking | EnvId::Bitflip)
    }

    /// Episode cap when the config gives none: about 20,000 steps for the
    /// goal-conditioned tasks.
    fn default_episodes(&self, bitflip_bits: usize) -> usize {
        match self {
            EnvId::Keylock | EnvId::KeylockSmall => 5000,
            EnvId::Parking => 20_000 / ParkingParams::default().max_steps,
            EnvId::Bitflip => 20_000usize.div_ceil(bitflip_bits + 5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentId {
    Dqn,
    A2c,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntropyId {
    #[serde(rename = "off")]
    Off,
    #[serde(rename = "ae", alias = "AE")]
    Ae,
    #[serde(rename = "ae+re", alias = "AE+RE")]
    AeRe,
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "constant")]
    Constant,
}

impl EntropyId {
    fn mode(&self) -> EntropyMode {
        match self {
            EntropyId::Off => EntropyMode::Off,
            EntropyId::Ae => EntropyMode::Action,
            EntropyId::AeRe => EntropyMode::ActionReward,
            EntropyId::Random => EntropyMode::Random,
            EntropyId::Constant => EntropyMode::Constant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegId {
    None,
    Exp,
    Hyper,
}

impl RegId {
    fn default_nu(&self) -> f64 {
        match self {
            RegId::None => 0.0,
            RegId::Exp => DEFAULT_NU_EXPONENTIAL,
            RegId::Hyper => DEFAULT_NU_HYPERBOLIC,
        }
    }
}

/// File contents as written; absent keys fall back to defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    env: Option<EnvId>,
    agent: Option<AgentId>,
    her: Option<bool>,
    entropy: Option<EntropyId>,
    reg: Option<RegId>,
    nu: Option<f64>,
    cthresh: Option<f64>,
    seeds: Option<Vec<u64>>,
    episodes: Option<usize>,
    epsilon: Option<f64>,
    epsilon_decay: Option<f64>,
    epsilon_min: Option<f64>,
    lr: Option<f64>,
    discount: Option<f64>,
    tau: Option<f64>,
    target_update: Option<String>,
    buffer_size: Option<usize>,
    batch_size: Option<usize>,
    hidden: Option<Vec<usize>>,
    reward_hidden: Option<Vec<usize>>,
    her_k: Option<usize>,
    her_to_feedback: Option<bool>,
    constant_reading: Option<String>,
    impute: Option<String>,
    reward_scale: Option<f64>,
    stop_at_convergence: Option<bool>,
    bitflip_bits: Option<usize>,
    variants: Option<Vec<String>>,
}

/// One algorithm setting within a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub entropy: EntropyId,
    pub reg: RegId,
    pub nu: f64,
    pub her: bool,
}

impl Variant {
    /// Parses names such as `dqn`, `ae`, `ae+re-hyper`, `random` or
    /// `dqn-her`: an entropy mode followed by optional `exp`, `hyper` and
    /// `her` tags. `dqn`, `a2c` and `off` all mean ungated.
    pub fn parse(name: &str, base: &ExperimentConfig) -> Result<Self, ConfigError> {
        let mut parts = name.split('-');
        let entropy = match parts.next().unwrap_or_default() {
            "dqn" | "a2c" | "off" => EntropyId::Off,
            "ae" => EntropyId::Ae,
            "ae+re" => EntropyId::AeRe,
            "random" => EntropyId::Random,
            "constant" => EntropyId::Constant,
            other => return invalid(format!("variant {name:?}: unknown entropy mode {other:?}")),
        };
        let mut reg = RegId::None;
        let mut her = false;
        for tag in parts {
            match tag {
                "exp" => reg = RegId::Exp,
                "hyper" => reg = RegId::Hyper,
                "her" => her = true,
                other => return invalid(format!("variant {name:?}: unknown tag {other:?}")),
            }
        }
        let nu = if reg == base.reg && base.reg != RegId::None {
            base.nu
        } else {
            reg.default_nu()
        };
        Ok(Variant {
            name: name.to_string(),
            entropy,
            reg,
            nu,
            her,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvId,
    pub agent: AgentId,
    pub her: bool,
    pub entropy: EntropyId,
    pub reg: RegId,
    pub nu: f64,
    pub cthresh: f64,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub lr: f64,
    pub discount: f64,
    pub tau: f64,
    pub hard_target: bool,
    pub buffer_size: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub reward_hidden: Vec<usize>,
    pub her_k: usize,
    pub her_to_feedback: bool,
    pub constant_reading: ConstantReading,
    pub imputation_sample: bool,
    pub reward_scale: f64,
    pub stop_at_convergence: bool,
    pub bitflip_bits: usize,
    pub variants: Vec<Variant>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::from_str("").expect("defaults are valid")
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str(&text)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let env = raw.env.unwrap_or(EnvId::KeylockSmall);
        let agent = raw.agent.unwrap_or(match env {
            EnvId::Parking => AgentId::A2c,
            _ => AgentId::Dqn,
        });
        let reg = raw.reg.unwrap_or(RegId::None);
        let bitflip_bits = raw.bitflip_bits.unwrap_or(8);
        let hard_target = match raw.target_update.as_deref() {
            None | Some("soft") => false,
            Some("hard") => true,
            Some(other) => return invalid(format!("target_update must be soft or hard, got {other:?}")),
        };
        let constant_reading = match raw.constant_reading.as_deref() {
            None | Some("confidence") => ConstantReading::UnitConfidence,
            Some("entropy") => ConstantReading::UnitEntropy,
            Some(other) => {
                return invalid(format!("constant_reading must be confidence or entropy, got {other:?}"))
            }
        };
        let imputation_sample = match raw.impute.as_deref() {
            None | Some("mean") => false,
            Some("sample") => true,
            Some(other) => return invalid(format!("impute must be mean or sample, got {other:?}")),
        };
        let mut config = ExperimentConfig {
            env,
            agent,
            her: raw.her.unwrap_or(false),
            entropy: raw.entropy.unwrap_or(EntropyId::Off),
            reg,
            nu: raw.nu.unwrap_or(reg.default_nu()),
            cthresh: raw.cthresh.unwrap_or(DEFAULT_THRESHOLD),
            seeds: raw.seeds.unwrap_or_else(|| vec![0]),
            episodes: raw.episodes.unwrap_or(env.default_episodes(bitflip_bits)),
            epsilon: raw.epsilon.unwrap_or(EPSILON_START),
            epsilon_decay: raw.epsilon_decay.unwrap_or(EPSILON_DECAY),
            epsilon_min: raw.epsilon_min.unwrap_or(EPSILON_MIN),
            lr: raw.lr.unwrap_or(0.005),
            discount: raw.discount.unwrap_or(0.99),
            tau: raw.tau.unwrap_or(0.99),
            hard_target,
            buffer_size: raw.buffer_size.unwrap_or(DEFAULT_CAPACITY),
            batch_size: raw.batch_size.unwrap_or(16),
            hidden: raw.hidden.unwrap_or_else(|| DEFAULT_HIDDEN.to_vec()),
            reward_hidden: raw.reward_hidden.unwrap_or_else(|| DEFAULT_REWARD_HIDDEN.to_vec()),
            her_k: raw.her_k.unwrap_or(4),
            her_to_feedback: raw.her_to_feedback.unwrap_or(true),
            constant_reading,
            imputation_sample,
            reward_scale: raw.reward_scale.unwrap_or(1.0),
            stop_at_convergence: raw.stop_at_convergence.unwrap_or(true),
            bitflip_bits,
            variants: Vec::new(),
        };
        config.variants = match raw.variants {
            Some(names) => names
                .iter()
                .map(|n| Variant::parse(n, &config))
                .collect::<Result<_, _>>()?,
            None => vec![config.base_variant()],
        };
        config.validate()?;
        Ok(config)
    }

    fn base_variant(&self) -> Variant {
        let mut name = match self.entropy {
            EntropyId::Off => match self.agent {
                AgentId::Dqn => "dqn",
                AgentId::A2c => "a2c",
            },
            EntropyId::Ae => "ae",
            EntropyId::AeRe => "ae+re",
            EntropyId::Random => "random",
            EntropyId::Constant => "constant",
        }
        .to_string();
        match self.reg {
            RegId::None => {}
            RegId::Exp => name.push_str("-exp"),
            RegId::Hyper => name.push_str("-hyper"),
        }
        if self.her {
            name.push_str("-her");
        }
        Variant {
            name,
            entropy: self.entropy,
            reg: self.reg,
            nu: self.nu,
            her: self.her,
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.variants.is_empty() {
            return invalid("variants must not be empty");
        }
        if self.seeds.is_empty() {
            return invalid("seeds must not be empty");
        }
        for (i, v) in self.variants.iter().enumerate() {
            if self.variants[..i].iter().any(|w| w.name == v.name) {
                return invalid(format!("variant {:?} listed twice", v.name));
            }
            if v.her && !self.env.goal_conditioned() {
                return invalid(format!(
                    "variant {:?}: hindsight relabeling needs a goal-conditioned env (parking or bitflip)",
                    v.name
                ));
            }
            if v.reg != RegId::None && !(v.nu > 0.0 && v.nu.is_finite()) {
                return invalid(format!("variant {:?}: nu must be positive", v.name));
            }
        }
        match (self.agent, self.env) {
            (AgentId::A2c, EnvId::Parking) | (AgentId::Dqn, EnvId::Keylock | EnvId::KeylockSmall | EnvId::Bitflip) => {}
            (agent, env) => return invalid(format!("agent {agent:?} does not fit env {env:?}")),
        }
        if self.bitflip_bits == 0 {
            return invalid("bitflip_bits must be positive");
        }
        if self.episodes == 0 {
            return invalid("episodes must be positive");
        }
        for v in &self.variants {
            self.trainer_config(v)
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    pub fn regularizer(&self, variant: &Variant) -> Regularizer {
        match variant.reg {
            RegId::None => Regularizer::None,
            RegId::Exp => Regularizer::Exponential { nu: variant.nu },
            RegId::Hyper => Regularizer::Hyperbolic { nu: variant.nu },
        }
    }

    pub fn trainer_config(&self, variant: &Variant) -> TrainerConfig {
        TrainerConfig {
            agent: match self.agent {
                AgentId::Dqn => AgentKind::Dqn,
                AgentId::A2c => AgentKind::ActorCritic,
            },
            entropy: variant.entropy.mode(),
            constant_reading: self.constant_reading,
            regularizer: self.regularizer(variant),
            threshold: self.cthresh,
            epsilon_start: self.epsilon,
            epsilon_decay: self.epsilon_decay,
            epsilon_min: self.epsilon_min,
            learning_rate: self.lr,
            discount: self.discount,
            target_update: if self.hard_target {
                TargetUpdate::Hard
            } else {
                TargetUpdate::Soft { tau: self.tau }
            },
            buffer_size: self.buffer_size,
            batch_size: self.batch_size,
            hidden: self.hidden.clone(),
            reward_hidden: self.reward_hidden.clone(),
            her: variant.her,
            her_k: self.her_k,
            her_to_feedback: self.her_to_feedback,
            imputation: if self.imputation_sample {
                Imputation::Sample
            } else {
                Imputation::Mean
            },
            reward_scale: self.reward_scale,
            max_episodes: self.episodes,
            stop_at_convergence: self.stop_at_convergence,
            log_steps: false,
            trace: false,
        }
    }

    /// A fresh environment for one run. The full key-lock grid is drawn
    /// from the run seed.
    pub fn make_env(&self, seed: u64) -> Result<Box<dyn Environment>, ConfigError> {
        Ok(match self.env {
            EnvId::KeylockSmall => Box::new(KeyLock::small()),
            EnvId::Keylock => Box::new(
                KeyLock::full(seed).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            ),
            EnvId::Parking => Box::new(Parking::new(ParkingParams::default())),
            EnvId::Bitflip => Box::new(BitFlip::new(self.bitflip_bits)),
        })
    }
}
