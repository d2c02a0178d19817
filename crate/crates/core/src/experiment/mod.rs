//! Declarative experiments: config validation, run orchestration, reports
//! and output manifests.

mod commands;
mod config;
mod manifest;
mod workspace;

use std::path::Path;

pub use commands::{
    cmd_audit, cmd_evaluate, cmd_ingest, cmd_report, cmd_sweep, cmd_validate, CommandOutput, IngestSummary,
    ReportCheck, ValidationReport,
};
pub use config::{
    AuditConfig, DatasetConfig, EmbeddingText, ExperimentConfig, Finding, RetrievalConfig, RunSpec, SplitConfig,
    StrategyEntry, SyntheticConfig,
};
pub use manifest::{sha256_file, Manifest, OutputEntry, RunInfo, ARTIFACT_VERSION, MANIFEST_FILE};
pub use workspace::{PredictionRow, RunResult, Workspace};

use crate::counterfactual::AuditError;
use crate::dataset::DatasetError;
use crate::gateway::GatewayError;
use crate::metrics::MetricsError;
use crate::prompting::PromptError;
use crate::retrieval::RetrievalError;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid configuration:\n{}", render_findings(.0))]
    Invalid(Vec<Finding>),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("run {run}: {source}")]
    Metrics {
        run: String,
        #[source]
        source: MetricsError,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl ExperimentError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io { path: path.display().to_string(), message: e.to_string() }
    }
}

fn render_findings(findings: &[Finding]) -> String {
    findings.iter().map(|f| format!("  - {f}")).collect::<Vec<_>>().join("\n")
}
