//! Evaluation and counterfactual bias auditing of chat-completion models on
//! emergency-department triage.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataset`]: triage records, loading, temporal/stratified splits, synthetic data
//! - [`serialize`]: record → prompt text under four serialization styles
//! - [`retrieval`]: embedding stores, exact KNN and two-stage KATE retrieval
//! - [`prompting`]: strategies, demonstration selection and prompt assembly
//! - [`gateway`]: chat/embeddings client with bounded concurrency, retries, caching and mock models
//! - [`metrics`]: accuracy, macro F-1, quadratic-weighted kappa, MSE
//! - [`counterfactual`]: 12-variant sex × race audits and group means
//! - [`stats`]: Wilcoxon signed-rank, Friedman, chi-square tail, Bonferroni
//! - [`experiment`]: declarative configs, run orchestration, reports and manifests

pub mod apportion;
pub mod counterfactual;
pub mod dataset;
pub mod experiment;
pub mod gateway;
pub mod metrics;
pub mod prompting;
pub mod retrieval;
pub mod seeds;
pub mod serialize;
pub mod stats;

pub use dataset::{AcuityLevel, Dataset, Demographics, Protocol, Race, Sex, TriageRecord, VitalSigns};
