//! Per-client dynamic style memory: one prototype row per identity.
//!
//! Prototypes start as the mean (normalized) encoder feature of each
//! identity and then drift toward accepted style features with a momentum
//! rule. Under the default `Renormalize` policy every row stays on the unit
//! sphere so the recognition loss compares directions only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{l2_normalize, EncoderParams};
use crate::style::DomainDataset;
use crate::tensor::{norm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenormPolicy {
    /// Average the batch features, blend, then project back to unit norm.
    Renormalize,
    /// Blend with the *sum* of the batch features and never renormalize.
    PaperLiteral,
}

impl RenormPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            RenormPolicy::Renormalize => "renormalize",
            RenormPolicy::PaperLiteral => "paper_literal",
        }
    }
}

/// What gets averaged when a memory is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitAverage {
    /// Mean of L2-normalized features.
    Normalized,
    /// Mean of raw encoder features.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryConfig {
    pub momentum: f64,
    pub policy: RenormPolicy,
    pub init_average: InitAverage,
    /// Local cross-entropy epochs before the memory is initialized.
    pub warmup_epochs: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            momentum: 0.2,
            policy: RenormPolicy::Renormalize,
            init_average: InitAverage::Normalized,
            warmup_epochs: 1,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "memory momentum must lie in [0, 1], got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Updated,
    /// No features were supplied for the identity; the row was left as is.
    SkippedEmpty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleMemory {
    prototypes: Option<Tensor>,
    num_identities: usize,
    dim: usize,
    momentum: f64,
    policy: RenormPolicy,
    update_count: Vec<u64>,
}

impl StyleMemory {
    /// An empty memory for `num_identities` rows of width `dim`.
    pub fn new(num_identities: usize, dim: usize, momentum: f64, policy: RenormPolicy) -> Self {
        Self {
            prototypes: None,
            num_identities,
            dim,
            momentum,
            policy,
            update_count: vec![0; num_identities],
        }
    }

    /// Wraps an existing prototype matrix, e.g. one read from a checkpoint.
    pub fn from_prototypes(prototypes: Tensor, momentum: f64, policy: RenormPolicy, update_count: Vec<u64>) -> Result<Self> {
        if update_count.len() != prototypes.rows() {
            return Err(Error::Shape(format!(
                "{} update counters for {} prototypes",
                update_count.len(),
                prototypes.rows()
            )));
        }
        Ok(Self {
            num_identities: prototypes.rows(),
            dim: prototypes.cols(),
            prototypes: Some(prototypes),
            momentum,
            policy,
            update_count,
        })
    }

    pub fn is_initialized(&self) -> bool {
        self.prototypes.is_some()
    }

    pub fn num_identities(&self) -> usize {
        self.num_identities
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn policy(&self) -> RenormPolicy {
        self.policy
    }

    pub fn update_count(&self) -> &[u64] {
        &self.update_count
    }

    /// Read-only snapshot of the prototype rows.
    pub fn prototype_matrix(&self) -> Result<Tensor> {
        self.prototypes.clone().ok_or_else(uninitialized)
    }

    /// Borrowed view used on hot paths.
    pub fn prototypes(&self) -> Result<&Tensor> {
        self.prototypes.as_ref().ok_or_else(uninitialized)
    }

    /// Blends accepted style features of one identity into its prototype.
    pub fn momentum_update(&mut self, identity: usize, features: &Tensor) -> Result<UpdateOutcome> {
        let policy = self.policy;
        let m = self.momentum;
        let dim = self.dim;
        let protos = self.prototypes.as_mut().ok_or_else(uninitialized)?;
        if identity >= protos.rows() {
            return Err(Error::Index(format!(
                "identity {identity} outside memory of {} rows",
                protos.rows()
            )));
        }
        if features.rows() == 0 || features.is_empty() {
            return Ok(UpdateOutcome::SkippedEmpty);
        }
        if features.cols() != dim {
            return Err(Error::Shape(format!(
                "style features have {} columns, memory has {dim}",
                features.cols()
            )));
        }
        let mut acc = vec![0.0; dim];
        for row in features.iter_rows() {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        if policy == RenormPolicy::Renormalize {
            let n = features.rows() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
        }
        let row = protos.row_mut(identity);
        for (p, a) in row.iter_mut().zip(&acc) {
            *p = (1.0 - m) * *p + m * a;
        }
        if policy == RenormPolicy::Renormalize {
            let n = norm(row);
            if !(n > crate::nn::MIN_NORM) {
                return Err(Error::Degenerate(format!(
                    "prototype {identity} collapsed to zero during update"
                )));
            }
            row.iter_mut().for_each(|p| *p /= n);
        }
        self.update_count[identity] += 1;
        Ok(UpdateOutcome::Updated)
    }

    /// SHA-256 of the text checkpoint; equal hashes mean bit-identical state.
    pub fn checkpoint_hash(&self) -> Result<String> {
        let text = crate::checkpoint::memory_to_text(self)?;
        Ok(crate::checkpoint::sha256_hex(text.as_bytes()))
    }
}

fn uninitialized() -> Error {
    Error::State("style memory has not been initialized".into())
}

/// Builds a memory whose row `i` is the mean feature of identity `i`.
pub fn initialize_memory(dataset: &DomainDataset, encoder: &EncoderParams, config: &MemoryConfig) -> Result<StyleMemory> {
    config.validate()?;
    let raw = encoder.forward(&dataset.features)?;
    let feats = match config.init_average {
        InitAverage::Normalized => l2_normalize(&raw)?,
        InitAverage::Raw => raw,
    };
    let dim = feats.cols();
    let mut protos = Tensor::zeros(&[dataset.num_identities, dim]);
    for (id, members) in dataset.indices_by_identity().iter().enumerate() {
        if members.is_empty() {
            return Err(Error::State(format!(
                "identity {id} of domain {} has no samples to initialize from",
                dataset.domain_id
            )));
        }
        let row = protos.row_mut(id);
        for &i in members {
            for (p, v) in row.iter_mut().zip(feats.row(i)) {
                *p += v;
            }
        }
        let n = members.len() as f64;
        row.iter_mut().for_each(|p| *p /= n);
    }
    if config.policy == RenormPolicy::Renormalize {
        protos = l2_normalize(&protos)?;
    }
    let count = vec![0; dataset.num_identities];
    StyleMemory::from_prototypes(protos, config.momentum, config.policy, count)
}
