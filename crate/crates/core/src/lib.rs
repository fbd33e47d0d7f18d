//! Triage policies learned from expert decisions.
//!
//! The library trains an agent that interleaves two choices on a clinical
//! vignette: ask for one more piece of evidence, or commit to one of four
//! triage levels. Triage actions are rewarded with a counterfactual vector
//! derived from a bag of expert decisions; the ask action gets a dynamic
//! target computed from the agent's own triage Q-values (an OR or AND
//! probabilistic query). Around the agent sit an episodic vignette
//! environment, a bucketed-priority replay memory, supervised and
//! non-learning baselines, evaluation metrics, a seeded synthetic dataset
//! generator, and a CLI harness for train/eval/k-fold/compare runs.

pub mod agent;
pub mod baselines;
pub mod env;
pub mod harness;
pub mod memory;
pub mod metrics;
pub mod nn;
pub mod rewards;
pub mod synthetic;
pub mod types;

use thiserror::Error;

/// Crate-wide error type. Variants name the contract they guard.
#[derive(Debug, Error)]
pub enum Error {
    #[error("evidence {index} appears more than once")]
    DuplicateEvidence { index: usize },
    #[error("evidence {index} outside registry of size {space}")]
    UnknownEvidence { index: usize, space: usize },
    #[error("decision bag is empty")]
    EmptyDecisionBag,
    #[error("vignette {id}: {reason}")]
    InvalidVignette { id: String, reason: String },
    #[error("dataset {path}, vignette #{index} ({id}): {reason}")]
    DatasetFormat {
        path: String,
        index: usize,
        id: String,
        reason: String,
    },
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("ask action after forced-triage signal")]
    ForcedTriageViolation,
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeError { expected: String, got: String },
    #[error("non-finite value in {0}")]
    NumericalError(String),
    #[error("restricted Q_m over an empty triage set")]
    EmptyRestriction,
    #[error("value {value} outside [0,1]")]
    DomainError { value: f64 },
    #[error("replay memory is empty")]
    EmptyMemory,
    #[error("isotonic fit needs at least one point")]
    EmptyFit,
    #[error("training set contains a single class")]
    SingleClassError,
    #[error("model queried before fitting")]
    NotFitted,
    #[error("no vignette meets the minimum decision count")]
    NoQualifyingVignettes,
    #[error("unknown vignette id {0}")]
    UnknownVignette(String),
    #[error("configuration: {0}")]
    ConfigError(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
