//! Triage records, dataset loading, temporal stratified splits and synthetic data.

mod io;
mod record;
mod split;
mod synthetic;

use std::collections::HashSet;

pub use io::{
    load_dataset, write_dataset, write_dataset_to, LoadOptions, LoadOutcome, RejectReason, Rejection,
    SchemaMap, CANONICAL_COLUMNS, EXTRA_PREFIX, REQUIRED_COLUMNS,
};
pub use record::{
    missingness_fraction, AcuityLevel, Demographics, InvalidAcuity, InvalidDemographic,
    PlausibilityWindows, Protocol, Race, Sex, TriageRecord, VitalKind, VitalSigns, Window,
    MISSINGNESS_SLOTS,
};
pub use split::{
    stratified_sample, temporal_stratified_split, MissingnessPolicy, Split, SplitReport, SplitSpec,
    StratumKey, StratumQuota, YearRange,
};
pub use synthetic::{generate_synthetic_dataset, generate_synthetic_with, SyntheticOptions, KTAS_EXTRA_COLUMNS};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read or write {path}: {source}")]
    FileUnreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing required column {0:?}")]
    MissingRequiredColumn(String),
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("cohort {cohort} has {available} eligible records, {requested} requested")]
    InsufficientRecords { cohort: String, requested: usize, available: usize },
    #[error("record {0:?} has no acuity label")]
    UnlabeledRecord(String),
    #[error("train years {train} and test years {test} overlap")]
    OverlappingYearRanges { train: YearRange, test: YearRange },
}

/// An ordered collection of triage records under one protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub protocol: Protocol,
    /// Protocol-specific `x_` columns in schema order.
    pub extra_columns: Vec<String>,
    pub records: Vec<TriageRecord>,
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate ids.
    pub fn new(
        name: impl Into<String>,
        protocol: Protocol,
        extra_columns: Vec<String>,
        records: Vec<TriageRecord>,
    ) -> Result<Self, DatasetError> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(DatasetError::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self { name: name.into(), protocol, extra_columns, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&TriageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }

    /// A dataset with the same metadata but a different record list.
    pub fn with_records(&self, name: impl Into<String>, records: Vec<TriageRecord>) -> Self {
        Self {
            name: name.into(),
            protocol: self.protocol,
            extra_columns: self.extra_columns.clone(),
            records,
        }
    }
}
