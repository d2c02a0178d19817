use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::config::{EmbeddingText, ExperimentConfig, RunSpec};
use super::ExperimentError;
use crate::counterfactual::{run_audit, AuditOutcome, AuditSetup};
use crate::dataset::{
    generate_synthetic_with, load_dataset, temporal_stratified_split, Dataset, LoadOptions, SplitReport, SplitSpec,
    SyntheticOptions, TriageRecord,
};
use crate::gateway::{CompletionJob, Gateway, JsonlCache, Subject};
use crate::metrics::{MetricReport, PredictionSet};
use crate::prompting::{
    build_prompt_with, demo_records_for, demo_serialization, select_demos_autocot, to_demonstrations, AutoCotClusters,
    DemoSources, PromptTemplates, RationaleGenerator, Rationales, StrategyConfig, StrategyKind,
};
use crate::retrieval::{fit_normalizer, EmbeddingStore, KateRetriever, VitalsNormalizer};
use crate::seeds::{keyed_seed, sub_seed};
use crate::serialize::serialize_record;

/// One test record's outcome in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub gold: u8,
    pub predicted: Option<u8>,
    pub raw_text: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub label: String,
    pub endpoint: String,
    pub strategy: StrategyConfig,
    pub metrics: MetricReport,
    pub predictions: Vec<PredictionRow>,
}

/// Loaded data, gateways and retrieval indexes for one experiment config.
pub struct Workspace {
    pub config: ExperimentConfig,
    pub templates: PromptTemplates,
    pub train: Dataset,
    /// Labelled test records only.
    pub test: Dataset,
    pub split_report: Option<SplitReport>,
    pub gateways: BTreeMap<String, Gateway>,
    text_store: Option<EmbeddingStore>,
    normalizer: Option<VitalsNormalizer>,
}

impl Workspace {
    /// Validates `config`, loads and splits the data, and connects gateways.
    /// Text embeddings are computed only when a strategy needs them.
    pub fn open(config: ExperimentConfig) -> Result<Self, ExperimentError> {
        let findings = config.validate();
        if !findings.is_empty() {
            return Err(ExperimentError::Invalid(findings));
        }
        let templates = config.load_templates()?;
        let (train, test, split_report) = load_data(&config)?;
        let unlabeled = test.records.iter().filter(|r| r.label.is_none()).count();
        if unlabeled > 0 {
            tracing::warn!(unlabeled, "test records without a label are skipped");
        }
        let mut test = test;
        test.records.retain(|r| r.label.is_some());

        let cache_root = config.cache_root();
        let mut gateways = BTreeMap::new();
        for ep in &config.endpoints {
            let mut ep = ep.clone();
            if let Some(spec) = ep.mock.as_mut() {
                spec.seed = keyed_seed(sub_seed(config.seed, "mock"), &format!("{}#{}", ep.name, spec.seed));
            }
            let gw = Gateway::new(ep.clone())?.with_cache_dir(&cache_root)?;
            gateways.insert(ep.name.clone(), gw);
        }

        let mut ws = Self { config, templates, train, test, split_report, gateways, text_store: None, normalizer: None };
        let kinds: Vec<StrategyKind> = ws.config.runs().iter().map(|r| r.strategy.kind).collect();
        if kinds.iter().any(|k| k.is_kate() || *k == StrategyKind::AutoCot) {
            ws.text_store = Some(ws.embed_records()?);
        }
        if kinds.iter().any(|k| k.is_kate()) {
            ws.normalizer = Some(fit_normalizer(&ws.train)?);
        }
        tracing::info!(train = ws.train.len(), test = ws.test.len(), "workspace ready");
        Ok(ws)
    }

    fn embedding_gateway(&self) -> &Gateway {
        let name = self.config.retrieval.embedding_endpoint.as_deref().unwrap_or(&self.config.endpoints[0].name);
        &self.gateways[name]
    }

    /// Text that stage-1 retrieval and clustering compare.
    pub fn embedding_text(&self, record: &TriageRecord) -> Result<String, ExperimentError> {
        Ok(match self.config.retrieval.text {
            EmbeddingText::ChiefComplaint => record.chief_complaint.clone(),
            EmbeddingText::Serialized => {
                serialize_record(record, &demo_serialization(&self.config.serialization)).map_err(crate::prompting::PromptError::from)?
            }
        })
    }

    fn embed_records(&self) -> Result<EmbeddingStore, ExperimentError> {
        let records: Vec<&TriageRecord> = self.train.records.iter().chain(&self.test.records).collect();
        let texts = records.iter().map(|r| self.embedding_text(r)).collect::<Result<Vec<_>, _>>()?;
        let vectors = self.embedding_gateway().embed(&texts)?;
        let dim = vectors.first().map_or(0, |v| v.dim());
        let mut store = EmbeddingStore::new(dim);
        for (r, v) in records.iter().zip(vectors) {
            if !store.contains(&r.id) {
                store.insert(&r.id, v)?;
            }
        }
        Ok(store)
    }

    pub fn gateway(&self, name: &str) -> &Gateway {
        &self.gateways[name]
    }

    fn autocot_clusters(&self, strategy: &StrategyConfig) -> Result<Option<AutoCotClusters>, ExperimentError> {
        if strategy.kind != StrategyKind::AutoCot {
            return Ok(None);
        }
        let store = self.text_store.as_ref().expect("embeddings prepared for auto_cot");
        let k = strategy.autocot_clusters.unwrap_or(0);
        Ok(Some(select_demos_autocot(&self.train, store, k, sub_seed(self.config.seed, "autocot"))?))
    }

    /// Runs `f` with demonstration sources for `spec`, generating any
    /// rationales the demonstrations of `queries` need first.
    fn with_sources<R>(
        &self,
        spec: &RunSpec,
        queries: &[TriageRecord],
        f: impl FnOnce(&DemoSources<'_>) -> Result<R, ExperimentError>,
    ) -> Result<R, ExperimentError> {
        let kate = match (&self.text_store, &self.normalizer) {
            (Some(s), Some(n)) if spec.strategy.kind.is_kate() => Some(KateRetriever::new(&self.train, s, n)),
            _ => None,
        };
        let clusters = self.autocot_clusters(&spec.strategy)?;
        let opts = demo_serialization(&self.config.serialization);
        let mut rationales = Rationales::new();
        let mut sources = DemoSources::new(&self.train, opts.clone());
        sources.kate = kate.as_ref();
        sources.autocot = clusters.as_ref();

        if spec.strategy.kind.demo_rationales() {
            let mut needed = BTreeSet::new();
            let mut records = Vec::new();
            for q in queries {
                for r in demo_records_for(&spec.strategy, q, &sources)? {
                    if needed.insert(r.id.as_str()) {
                        records.push(r);
                    }
                }
            }
            let cache = JsonlCache::open(&self.config.cache_root().join("rationales.jsonl"), "rationale")
                .map_err(crate::prompting::PromptError::from)?;
            let generator =
                RationaleGenerator::new(self.gateway(&spec.endpoint), &self.templates, self.train.protocol, opts, cache);
            let generated = generator.generate(&records, &mut rationales)?;
            tracing::info!(run = %spec.label(), demos = records.len(), generated, "rationales ready");
        }
        sources.rationales = Some(&rationales);
        f(&sources)
    }

    /// Evaluates one run on the whole test set. Failed and unparseable
    /// responses are excluded from the metrics and counted.
    pub fn evaluate(&self, spec: &RunSpec) -> Result<RunResult, ExperimentError> {
        let label = spec.label();
        let queries = &self.test.records;
        let jobs = self.with_sources(spec, queries, |sources| {
            queries
                .iter()
                .map(|q| {
                    let recs = demo_records_for(&spec.strategy, q, sources)?;
                    let demos = to_demonstrations(&spec.strategy, &recs, sources)?;
                    let bundle = build_prompt_with(
                        &self.templates,
                        &spec.strategy,
                        q,
                        &demos,
                        self.test.protocol,
                        &self.config.serialization,
                    )?;
                    Ok(CompletionJob { messages: bundle.to_messages(), subject: Some(Subject::of(q)) })
                })
                .collect::<Result<Vec<_>, ExperimentError>>()
        })?;
        tracing::info!(run = %label, prompts = jobs.len(), "evaluating");
        let results = self.gateway(&spec.endpoint).complete_batch(&jobs);

        let mut gold = Vec::with_capacity(queries.len());
        let mut predicted = Vec::with_capacity(queries.len());
        let mut rows = Vec::with_capacity(queries.len());
        for (q, res) in queries.iter().zip(results) {
            let g = q.label.expect("test records are labelled");
            let row = match res {
                Ok(r) => PredictionRow {
                    id: q.id.clone(),
                    gold: g.get(),
                    predicted: r.parsed.map(|l| l.get()),
                    error: r.parse_error.map(|e| e.to_string()),
                    raw_text: Some(r.raw_text),
                },
                Err(e) => PredictionRow { id: q.id.clone(), gold: g.get(), predicted: None, raw_text: None, error: Some(e.to_string()) },
            };
            gold.push(g);
            predicted.push(row.predicted.and_then(|p| crate::dataset::AcuityLevel::new(p).ok()));
            rows.push(row);
        }
        let set = PredictionSet::from_predictions(&gold, &predicted)
            .map_err(|source| ExperimentError::Metrics { run: label.clone(), source })?;
        let metrics = MetricReport::compute(&set).map_err(|source| ExperimentError::Metrics { run: label.clone(), source })?;
        Ok(RunResult { label, endpoint: spec.endpoint.clone(), strategy: spec.strategy.clone(), metrics, predictions: rows })
    }

    /// Counterfactual audit of one run over the configured audit records.
    pub fn audit(&self, spec: &RunSpec) -> Result<AuditOutcome, ExperimentError> {
        let n = self.config.audit.records.unwrap_or(self.test.len()).min(self.test.len());
        let records = &self.test.records[..n];
        self.with_sources(spec, records, |sources| {
            let setup = AuditSetup {
                strategy: &spec.strategy,
                templates: &self.templates,
                protocol: self.test.protocol,
                opts: self.config.serialization.clone(),
                demos: sources,
                abort_fraction: self.config.audit.abort_fraction,
            };
            tracing::info!(run = %spec.label(), records = n, "auditing");
            Ok(run_audit(records, self.gateway(&spec.endpoint), &setup)?)
        })
    }
}

fn load_data(config: &ExperimentConfig) -> Result<(Dataset, Dataset, Option<SplitReport>), ExperimentError> {
    let ds = &config.dataset;
    let load = |p: &std::path::Path| -> Result<Dataset, ExperimentError> {
        let opts = LoadOptions {
            schema_map: ds.schema_map.clone(),
            delimiter: ds.delimiter.unwrap_or(','),
            ..LoadOptions::new(ds.protocol)
        };
        let path = config.resolve(p);
        let outcome = load_dataset(&path, &opts)?;
        if !outcome.rejections.is_empty() {
            tracing::warn!(path = %path.display(), rejected = outcome.rejections.len(), "rows rejected while loading");
        }
        Ok(outcome.dataset)
    };
    if let (Some(train), Some(test)) = (&ds.train_path, &ds.test_path) {
        return Ok((load(train)?, load(test)?, None));
    }
    let full = match (&ds.path, &ds.synthetic) {
        (Some(p), _) => load(p)?,
        (None, Some(s)) => generate_synthetic_with(&SyntheticOptions {
            n: s.n,
            seed: sub_seed(config.seed, "synthetic"),
            protocol: ds.protocol,
            missing_rate: s.missing_rate,
            first_year: s.first_year,
            last_year: s.last_year,
        }),
        (None, None) => unreachable!("validated config has a data source"),
    };
    let s = config.split.as_ref().expect("validated config has a split");
    let spec = SplitSpec {
        train_years: s.train_years,
        test_years: s.test_years,
        train_n: s.train_n,
        test_n: s.test_n,
        seed: s.seed.unwrap_or_else(|| sub_seed(config.seed, "split")),
        missingness: s.missingness.clone(),
    };
    let split = temporal_stratified_split(&full, &spec)?;
    Ok((split.train, split.test, Some(split.report)))
}
