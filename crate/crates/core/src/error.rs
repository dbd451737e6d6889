use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: expected 3 tab-separated columns, found {found}")]
    Malformed {
        path: PathBuf,
        line: usize,
        found: usize,
    },
    #[error("{path}:{line}: duplicate triple within split")]
    DuplicateTriple { path: PathBuf, line: usize },
    #[error("duplicate triple {0:?} within split `{1}`")]
    DuplicateInSplit(crate::graph::Triple, &'static str),
    #[error("entity id {id} out of range (|E| = {count})")]
    EntityOutOfRange { id: usize, count: usize },
    #[error("relation id {id} out of range (|R| = {count})")]
    RelationOutOfRange { id: usize, count: usize },
    #[error("triple {0:?} is not in the train split")]
    NotATrainTriple(crate::graph::Triple),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("entity id {id} out of range (|E| = {count})")]
    EntityOutOfRange { id: usize, count: usize },
    #[error("relation id {id} out of range (|R| = {count})")]
    RelationOutOfRange { id: usize, count: usize },
    #[error("invalid embedding dimension {0}")]
    InvalidDimension(usize),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unknown model kind tag {0}")]
    UnknownModelTag(u32),
    #[error("checkpoint truncated: expected {expected} values, found {found}")]
    Truncated { expected: usize, found: usize },
}

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("empty minibatch has no degree distribution")]
    EmptyMinibatch,
    #[error("cannot average an empty list of histograms")]
    NoHistograms,
    #[error("sweep needs at least {min} batches per point, got {got}")]
    TooFewBatches { min: usize, got: usize },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("csv output: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("train split is empty")]
    EmptyTrainSplit,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {loss}; batch dump: {dump}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
        dump: String,
    },
    #[error("store shape does not match the graph: {0}")]
    ShapeMismatch(String),
    #[error("gradient variance probe needs at least 2 batches, got {0}")]
    TooFewProbeBatches(usize),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("{name} must lie in [0, 1], got {value}")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },
    #[error("train split is empty; nothing to sample")]
    EmptyTrainSplit,
    #[error("unknown sampler `{0}` (valid kinds: sr, rw, rwr, rwisg, rwisg-n)")]
    UnknownKind(String),
    #[error("unknown restart target `{0}` (valid: start, previous)")]
    UnknownRestartTarget(String),
}

#[derive(Debug, Error)]
pub enum LossError {
    #[error("corruption needs at least 2 entities, graph has {0}")]
    TooFewEntities(usize),
    #[error("no negatives supplied")]
    NoNegatives,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}
