//! Embedding storage, exact nearest-neighbour search and two-stage KATE retrieval.

mod kate;
mod normalizer;
mod store;

pub use kate::{kate_retrieve, KateRetriever};
pub use normalizer::{fit_normalizer, vitals_vector, ComponentStats, VitalsComponent, VitalsNormalizer};
pub use store::{cosine_similarity, knn, knn_scored, EmbeddingStore, EmbeddingVector};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cosine similarity is undefined for an all-zero vector")]
    ZeroVector,
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("k = {k} exceeds store size {size}")]
    KTooLarge { k: usize, size: usize },
    #[error("no embedding for record {0:?}")]
    MissingEmbedding(String),
    #[error("stage-1 pool of {needed} exceeds the {available} available training records")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("cannot fit a normalizer on an empty training set")]
    EmptyTrainingSet,
    #[error("embedding file {path}: {message}")]
    File { path: String, message: String },
}
