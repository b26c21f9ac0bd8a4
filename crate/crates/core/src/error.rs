//! Error types shared across the simulator, learner and harness.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    Parse(String),
}

impl ConfigError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field,
            reason: reason.into(),
        }
    }
}

/// Caller contract violations detected by the simulator.
#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("expected {expected} targets, got {got}")]
    TargetCount { expected: usize, got: usize },
    #[error("robot {robot} targets object {object}, which does not exist")]
    UnknownObject { robot: usize, object: usize },
    #[error("robot {robot} targets completed object {object}")]
    CompletedTarget { robot: usize, object: usize },
    #[error("object {object} does not exist")]
    NoSuchObject { object: usize },
    #[error("object {object} is already completed")]
    ObjectCompleted { object: usize },
    #[error("robot {robot} has no target while objects remain")]
    MissingTarget { robot: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("cache does not belong to the current parameters")]
    StaleCache,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("weight file: {0}")]
    Format(String),
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss for agent {agent}: critic loss {critic_loss}, actor loss {actor_loss}")]
    NonFiniteLoss {
        agent: usize,
        critic_loss: f64,
        actor_loss: f64,
    },
    #[error("replay buffer holds {population} transitions, batch needs {batch}")]
    BufferTooSmall { population: usize, batch: usize },
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Top-level error for the evaluation harness and checkpoint handling.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("method {0} needs a trained checkpoint")]
    MissingCheckpoint(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("plot input: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
