//! Experiment configuration.
//!
//! Configs are TOML files: bracketed sections of `key = value` lines. Every
//! key has a default, so an empty file is a complete configuration; unknown
//! keys are rejected. [`ExperimentConfig::resolved`] fills in the
//! synthesized client and target domains, and [`ExperimentConfig::to_text`]
//! writes a fully explicit echo that parses back to the same config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalPlan;
use crate::memory::MemoryConfig;
use crate::nn::{Activation, LossConfig, OptimizerConfig};
use crate::rng::derive_seed;
use crate::style::{DomainSpec, StyleTransformConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Communication rounds `E`.
    pub rounds: usize,
    pub epochs_per_round: usize,
    /// Local iterations per epoch; 0 means `ceil(N_k / (P·K))`.
    pub iters_per_epoch: usize,
    /// Run client rounds on a thread pool.
    pub parallel: bool,
    /// Rounds (1-based) in which every style transform degrades its batch.
    pub forced_degrade_rounds: Vec<usize>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimizerConfig,
    pub memory: MemoryConfig,
    pub transform: StyleTransformConfig,
    pub ablation: Ablation,
    pub batch: BatchConfig,
    pub eval: EvalConfig,
    /// Source domains, one per client. Synthesized from `data` when empty.
    pub clients: Vec<DomainSpec>,
    /// Held-out target domain. Synthesized from `data` when absent.
    pub target: Option<DomainSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rounds: 60,
            epochs_per_round: 1,
            iters_per_epoch: 50,
            parallel: true,
            forced_degrade_rounds: Vec::new(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optim: OptimizerConfig::default(),
            memory: MemoryConfig::default(),
            transform: StyleTransformConfig::default(),
            ablation: Ablation::full(),
            batch: BatchConfig::default(),
            eval: EvalConfig::default(),
            clients: Vec::new(),
            target: None,
        }
    }
}

/// Generator settings for synthesized domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub num_sources: usize,
    pub input_dim: usize,
    pub identities: usize,
    pub samples_per_identity: usize,
    pub noise_sigma: f64,
    /// Rank of the subspace identity latents live in; 0 draws full-rank
    /// isotropic latents.
    pub latent_rank: usize,
    /// Log-scale spread of per-channel style multipliers.
    pub scale_spread: f64,
    /// Spread of per-channel style offsets.
    pub shift_spread: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            num_sources: 3,
            input_dim: 16,
            identities: 20,
            samples_per_identity: 10,
            noise_sigma: 0.7,
            latent_rank: 4,
            scale_spread: 1.0,
            shift_spread: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            output_dim: 32,
            activation: Activation::Tanh,
        }
    }
}

/// Which parts of the method are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// New-style adaptation: style-transform the batch before `L_NS`.
    pub enable_nsa: bool,
    /// Positive-style continuous utilization: memory + recognition loss.
    pub enable_pscu: bool,
    /// Gate memory updates on Rank-1 improvement.
    pub enable_screening: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::full()
    }
}

impl Ablation {
    pub fn full() -> Self {
        Self {
            enable_nsa: true,
            enable_pscu: true,
            enable_screening: true,
        }
    }

    pub fn baseline() -> Self {
        Self {
            enable_nsa: false,
            enable_pscu: false,
            enable_screening: false,
        }
    }

    /// Preset by name: `baseline`, `nsa`, `pscu` or `full`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "baseline" => Ok(Self::baseline()),
            "nsa" => Ok(Self {
                enable_nsa: true,
                ..Self::baseline()
            }),
            "pscu" => Ok(Self {
                enable_pscu: true,
                enable_screening: true,
                ..Self::baseline()
            }),
            "full" => Ok(Self::full()),
            other => Err(Error::Config(format!(
                "unknown ablation {other:?} (expected baseline, nsa, pscu or full)"
            ))),
        }
    }

    pub const PRESETS: [&'static str; 4] = ["baseline", "nsa", "pscu", "full"];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchConfig {
    /// Identities per batch.
    pub p: usize,
    /// Instances per identity.
    pub k: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self { p: 16, k: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub plan: EvalPlan,
    /// Share of each identity's samples used as queries.
    pub query_fraction: f64,
    pub max_rank: usize,
    /// Held-out identities per source used for screening.
    pub val_identities: usize,
    /// Unseen identities per evaluation domain: the synthesized target and
    /// each source's held-out split for the `source_domains` plan.
    pub test_identities: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            plan: EvalPlan::LeaveOneOut,
            query_fraction: 0.2,
            max_rank: 10,
            val_identities: 20,
            test_identities: 100,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text. `origin` is used in error messages.
    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::ConfigFile {
                path: origin.to_path_buf(),
                line,
                message: e.message().to_string(),
            }
        })?;
        config.validate().map_err(|e| Error::ConfigFile {
            path: origin.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        Ok(config)
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optim.validate()?;
        self.memory.validate()?;
        self.transform.validate()?;
        if self.batch.p == 0 || self.batch.k == 0 {
            return Err(Error::Config("batch P and K must be positive".into()));
        }
        if self.batch.k < 2 {
            return Err(Error::Config("batch K must be at least 2 for triplet mining".into()));
        }
        if self.epochs_per_round == 0 {
            return Err(Error::Config("epochs_per_round must be positive".into()));
        }
        if self.model.output_dim == 0 || self.model.hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(self.eval.query_fraction > 0.0 && self.eval.query_fraction < 1.0) {
            return Err(Error::Config("eval.query_fraction must lie in (0, 1)".into()));
        }
        if self.eval.val_identities < 2 || self.eval.test_identities < 2 {
            return Err(Error::Config("held-out splits need at least 2 identities".into()));
        }
        let (clients, target) = self.domains();
        if clients.is_empty() {
            return Err(Error::Config("at least one source domain is required".into()));
        }
        if self.eval.plan == EvalPlan::ReducedSources && clients.len() < 2 {
            return Err(Error::Config("reduced_sources needs at least two sources".into()));
        }
        let d = target.input_dim();
        let mut ids = std::collections::BTreeSet::new();
        for spec in clients.iter().chain(std::iter::once(&target)) {
            spec.validate()?;
            if spec.input_dim() != d {
                return Err(Error::Config(format!(
                    "domain {} has input dimension {}, expected {d}",
                    spec.domain_id,
                    spec.input_dim()
                )));
            }
            if !ids.insert(spec.domain_id) {
                return Err(Error::Config(format!("domain id {} used twice", spec.domain_id)));
            }
        }
        Ok(())
    }

    /// Source and target domain specs, synthesizing any not given explicitly.
    pub fn domains(&self) -> (Vec<DomainSpec>, DomainSpec) {
        let d = &self.data;
        let synth = |id: u32| {
            DomainSpec::random_style(
                id,
                d.identities,
                d.samples_per_identity,
                d.input_dim,
                d.noise_sigma,
                d.scale_spread,
                d.shift_spread,
                derive_seed(self.seed, 0xd0_0000 + u64::from(id)),
            )
        };
        let clients = if self.clients.is_empty() {
            (0..d.num_sources as u32).map(synth).collect()
        } else {
            self.clients.clone()
        };
        let target = self.target.clone().unwrap_or_else(|| {
            let next = clients.iter().map(|c| c.domain_id + 1).max().unwrap_or(0);
            // the unseen domain is evaluated on unseen identities too
            DomainSpec {
                num_identities: self.eval.test_identities,
                ..synth(next)
            }
        });
        (clients, target)
    }

    /// Copy with every domain written out explicitly.
    pub fn resolved(&self) -> Self {
        let (clients, target) = self.domains();
        Self {
            clients,
            target: Some(target),
            ..self.clone()
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigFile {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    ExperimentConfig::from_text(&text, path)
}
