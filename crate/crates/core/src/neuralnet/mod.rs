//! Single-hidden-layer feedforward networks ("experts") trained by online
//! backpropagation, plus expert generation, selection and random-perturbation
//! hill climbing.

mod experts;
mod format;
mod mlp;

pub use experts::{
    generate_experts, perturb_improve, select_expert, ExpertScore, PerturbOutcome, ScoredExpert, Selection,
    TrainingData,
};
pub use format::{load_expert, save_expert, FORMAT_HEADER};
pub use mlp::{
    seeded_rng, EpochStat, Gradients, MlpExpert, Scaling, TrainConfig, DIVERGENCE_LIMIT, SCALED_HIGH, SCALED_LOW,
    SCALED_SPAN,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("scaling error for '{name}': {reason}")]
    Scaling { name: String, reason: String },
    #[error("state error: {0}")]
    State(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("expert {index} (seed {seed}): {source}")]
    Expert {
        index: usize,
        seed: u64,
        #[source]
        source: Box<NetError>,
    },
    #[error("scoring expert {index} (seed {seed}) failed: {reason}")]
    Selection { index: usize, seed: u64, reason: String },
    #[error("format error at line {line}: {reason}")]
    Format { line: usize, reason: String },
}
