//! Knowledge-graph completion with graph-sampled minibatches.
//!
//! The crate trains TransE, DistMult, ComplEx and RotatE embeddings with
//! one of five minibatch samplers (uniform triples, random walk, random walk
//! with restart, random walk with induced-subgraph closure, and the latter
//! plus random extra neighbors), and ships the instruments used to compare
//! them: minibatch degree distributions and expected degree, a per-entity
//! gradient-variance probe, the Neighbors' Loss and filtered ranking.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar type for the common cases.

pub mod error;
pub mod eval;
pub mod graph;
pub mod loss;
pub mod model;
pub mod optim;
pub mod sampler;
pub mod scalar;
pub mod stats;
pub mod synthetic;
pub mod trainer;

pub use error::{GraphError, LossError, ModelError, SamplerError, StatsError, TrainError};
pub use eval::{evaluate_split, evaluate_triples, rank_triple, Metrics, Protocol, RankResult};
pub use graph::{EntityId, KnowledgeGraph, RelationId, Split, Triple};
pub use loss::{LossConfig, SparseGrad};
pub use model::{EmbeddingStore, ModelKind, ScoreGradient};
pub use optim::{OptimizerKind, SparseAdam};
pub use sampler::{Minibatch, RestartTarget, Sampler, SamplerKind, SamplerPolicy};
pub use scalar::Scalar;
pub use stats::DegreeHistogram;
pub use trainer::{train, GradientVarianceReport, TrainConfig, Trainer};

pub type EmbeddingStore64 = EmbeddingStore<f64>;
pub type EmbeddingStore32 = EmbeddingStore<f32>;
pub type SparseGrad64 = SparseGrad<f64>;
pub type SparseGrad32 = SparseGrad<f32>;
pub type ScoreGradient64 = ScoreGradient<f64>;
pub type SparseAdam64 = SparseAdam<f64>;
pub type SparseAdam32 = SparseAdam<f32>;
