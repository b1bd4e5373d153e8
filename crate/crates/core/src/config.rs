//! Run configuration: one TOML file with sections mirroring the module
//! boundaries. Unknown keys are rejected so typos fail loudly.

use crate::agent::Activation;
use crate::env::{sample_gridworld_params, DeepSea, DeepSeaParams, Env, Gridworld, GridworldRanges, ChainEnv};
use crate::es::EsConfig;
use crate::optim::{
    BaselineHyper, BaselineKind, BaselineOptimizer, FeatureMask, OpenArch,
};
use crate::ppo::PpoConfig;
use crate::rng::stream_rng;
use crate::{Error, Result};
use std::path::PathBuf;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    /// A task draw from the parametric gridworld distribution; `task_seed`
    /// overrides the per-run task stream when set.
    Gridworld {
        #[serde(default)]
        ranges: GridworldRanges,
    },
    DeepSea { size: usize },
    Chain { length: usize },
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Gridworld { ranges: GridworldRanges::default() }
    }
}

impl EnvConfig {
    /// Instantiates the environment for one task draw.
    pub fn build(&self, task_seed: u64) -> Result<Box<dyn Env>> {
        match self {
            EnvConfig::Gridworld { ranges } => {
                let mut rng = stream_rng(task_seed, "gridworld-task", &[]);
                let params = sample_gridworld_params(ranges, &mut rng)?;
                Ok(Box::new(Gridworld::new(params)?))
            }
            EnvConfig::DeepSea { size } => {
                Ok(Box::new(DeepSea::new(DeepSeaParams::standard(*size, task_seed)?)?))
            }
            EnvConfig::Chain { length } => Ok(Box::new(ChainEnv::new(*length)?)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::Gridworld { ranges } => ranges.validate(),
            EnvConfig::DeepSea { size } => {
                if *size < 2 {
                    Err(Error::Config("env.size: deep sea needs size >= 2".into()))
                } else {
                    Ok(())
                }
            }
            EnvConfig::Chain { length } => {
                if *length < 1 {
                    Err(Error::Config("env.length: chain needs length >= 1".into()))
                } else {
                    Ok(())
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub width: usize,
    pub n_hidden: usize,
    pub activation: Activation,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig { width: 16, n_hidden: 2, activation: Activation::Tanh }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.n_hidden == 0 {
            return Err(Error::Config("agent.width and agent.n_hidden must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// "adam", "rmsprop", "lion", "sgd_momentum", or "open".
    pub kind: String,
    pub lr: f64,
    pub anneal: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// RMSprop second-moment decay.
    pub decay: f64,
    /// Learned-optimizer checkpoint to load for kind = "open".
    pub checkpoint: Option<PathBuf>,
    /// Feature-ablation mask name; see `FeatureMask::by_name`.
    pub mask: String,
    pub separated: bool,
    /// "standard", "multi_task", or "no_features".
    pub arch: String,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: "adam".into(),
            lr: 1e-4,
            anneal: true,
            beta1: 0.99,
            beta2: 0.99,
            eps: 1e-8,
            decay: 0.99,
            checkpoint: None,
            mask: "none".into(),
            separated: false,
            arch: "standard".into(),
        }
    }
}

impl OptimizerConfig {
    pub fn feature_mask(&self) -> Result<FeatureMask> {
        FeatureMask::by_name(&self.mask)
    }

    pub fn open_arch(&self) -> Result<OpenArch> {
        match self.arch.as_str() {
            "standard" => Ok(OpenArch::standard()),
            "multi_task" => Ok(OpenArch::multi_task()),
            "no_features" => Ok(OpenArch::no_features()),
            other => Err(Error::Config(format!("optimizer.arch: unknown architecture '{other}'"))),
        }
    }

    pub fn baseline_kind(&self) -> Result<BaselineKind> {
        match self.kind.as_str() {
            "adam" => Ok(BaselineKind::Adam { beta1: self.beta1, beta2: self.beta2, eps: self.eps }),
            "rmsprop" => Ok(BaselineKind::RmsProp { decay: self.decay, eps: self.eps }),
            "lion" => Ok(BaselineKind::Lion { beta1: self.beta1, beta2: self.beta2 }),
            "sgd_momentum" => Ok(BaselineKind::SgdMomentum { beta: self.beta1 }),
            other => Err(Error::Config(format!("optimizer.kind: '{other}' is not a baseline"))),
        }
    }

    pub fn build_baseline(&self, n_params: usize) -> Result<BaselineOptimizer> {
        Ok(BaselineOptimizer::new(
            self.baseline_kind()?,
            BaselineHyper { lr: self.lr, anneal: self.anneal },
            n_params,
        ))
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != "open" {
            self.baseline_kind()?;
            if self.lr <= 0.0 {
                return Err(Error::Config("optimizer.lr must be positive".into()));
            }
        }
        self.feature_mask()?;
        self.open_arch()?;
        Ok(())
    }
}

/// The whole run file. Every section has defaults, so an empty file is a
/// valid gridworld-with-Adam run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker thread limit; 0 means one per core.
    pub workers: usize,
    /// Seed battery size for train / eval / ablate.
    pub n_seeds: usize,
    /// Record per-update traces for `analyze`.
    pub record_trace: bool,
    /// Output stride for analysis series.
    pub stride: usize,
    /// Ablation mask names for the `ablate` command.
    pub ablations: Vec<String>,
    /// Episodes per evaluation run.
    pub eval_episodes: usize,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub ppo: PpoConfig,
    pub es: EsConfig,
    pub optimizer: OptimizerConfig,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.fill_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn fill_defaults(&mut self) {
        if self.n_seeds == 0 {
            self.n_seeds = 1;
        }
        if self.stride == 0 {
            self.stride = 10;
        }
        if self.eval_episodes == 0 {
            self.eval_episodes = 32;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        self.ppo.validate()?;
        self.es.validate()?;
        self.optimizer.validate()?;
        for name in &self.ablations {
            FeatureMask::by_name(name)?;
        }
        Ok(())
    }

    /// FNV-1a hash of the effective (defaults-expanded) config, for
    /// checkpoint provenance. The worker count is a runtime knob with no
    /// effect on results, so it is excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.workers = 0;
        let text = toml::to_string(&canonical).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &b in text.as_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}
