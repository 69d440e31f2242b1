//! `fedstyle` simulates federated domain generalization with per-client
//! style memories.
//!
//! Each client owns one synthetic source domain. Clients train a downloaded
//! copy of the server encoder on stylized batches (new-style branch) and on
//! original batches against a memory of identity prototypes
//! (positive-style branch). The server averages the encoders weighted by
//! client data volume and only lets the round's style features into the
//! memories when the aggregated model's Rank-1 on held-out source
//! identities improves.
//!
//! Start with [`federation::run_experiment`] or the programs in `examples/`.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod federation;
pub mod memory;
pub mod nn;
pub mod rng;
pub mod runner;
pub mod style;
pub mod tensor;

pub use config::{parse_config, Ablation, ExperimentConfig};
pub use error::{Error, Result};
pub use federation::{run_experiment, Experiment, ExperimentOutcome};
pub use tensor::Tensor;
