use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::dataset::{MissingnessPolicy, Protocol, SchemaMap, YearRange, CANONICAL_COLUMNS};
use crate::gateway::ModelEndpoint;
use crate::prompting::{DemoOrder, PromptTemplates, StrategyConfig, StrategyKind};
use crate::serialize::SerializationOptions;

/// Declarative experiment description, usually read from a TOML file.
/// Relative paths are resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Gateway and rationale caches; defaults to `<output_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Prompt template file; the bundled wording when absent.
    #[serde(default)]
    pub templates: Option<PathBuf>,
    #[serde(default = "one")]
    pub bonferroni_m: usize,
    #[serde(default)]
    pub sweep_shots: Vec<usize>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: Option<SplitConfig>,
    #[serde(default)]
    pub serialization: SerializationOptions,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub endpoints: Vec<ModelEndpoint>,
    #[serde(default)]
    pub strategies: Vec<StrategyEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub protocol: Protocol,
    /// One file split temporally by `[split]`.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Pre-split files; no `[split]` section then.
    #[serde(default)]
    pub train_path: Option<PathBuf>,
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    /// Generated data instead of a file, split by `[split]`.
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default)]
    pub schema_map: SchemaMap,
    #[serde(default)]
    pub delimiter: Option<char>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n: usize,
    #[serde(default = "default_missing_rate")]
    pub missing_rate: f64,
    #[serde(default = "default_first_year")]
    pub first_year: i32,
    #[serde(default = "default_last_year")]
    pub last_year: i32,
}

fn default_missing_rate() -> f64 {
    0.1
}
fn default_first_year() -> i32 {
    2014
}
fn default_last_year() -> i32 {
    2019
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train_years: YearRange,
    pub test_years: YearRange,
    pub train_n: usize,
    pub test_n: usize,
    /// Overrides the seed derived from the experiment seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub missingness: MissingnessPolicy,
}

/// Text embedded for KATE stage 1 and AutoCoT clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingText {
    #[default]
    ChiefComplaint,
    /// The serialized record without the demographic sentence.
    Serialized,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub text: EmbeddingText,
    /// Endpoint answering embedding requests; the first endpoint when absent.
    pub embedding_endpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    pub enabled: bool,
    /// Audit the first `records` test records; all when absent.
    pub records: Option<usize>,
    pub abort_fraction: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self { enabled: false, records: None, abort_fraction: crate::counterfactual::DEFAULT_ABORT_FRACTION }
    }
}

/// A strategy as written in the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyEntry {
    pub kind: String,
    #[serde(default)]
    pub shots: usize,
    #[serde(default)]
    pub autocot_clusters: Option<usize>,
    #[serde(default)]
    pub demo_order: DemoOrder,
    /// Overrides the demonstration seed derived from the experiment seed.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Endpoints to run on; every endpoint when empty.
    #[serde(default)]
    pub endpoints: Vec<String>,
}

/// A problem found while validating a config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

/// One (endpoint, strategy) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub endpoint: String,
    pub strategy: StrategyConfig,
}

impl RunSpec {
    pub fn label(&self) -> String {
        format!("{}/{}", self.endpoint, self.strategy.label())
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ExperimentError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| {
            ExperimentError::Invalid(vec![Finding { key: "<config>".into(), message: e.to_string() }])
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_root(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn cache_root(&self) -> PathBuf {
        match &self.cache_dir {
            Some(p) => self.resolve(p),
            None => self.output_root().join("cache"),
        }
    }

    pub fn load_templates(&self) -> Result<PromptTemplates, ExperimentError> {
        match &self.templates {
            Some(p) => Ok(PromptTemplates::load(&self.resolve(p))?),
            None => Ok(PromptTemplates::default()),
        }
    }

    /// Strategy with its derived seed; `Err` carries the reason it is invalid.
    pub fn strategy_config(&self, entry: &StrategyEntry) -> Result<StrategyConfig, String> {
        let kind: StrategyKind = entry.kind.parse().map_err(|e: crate::prompting::UnknownStrategy| e.to_string())?;
        let cfg = StrategyConfig {
            kind,
            shots: entry.shots,
            seed: entry.seed.unwrap_or_else(|| crate::seeds::sub_seed(self.seed, "demos")),
            autocot_clusters: entry.autocot_clusters,
            demo_order: entry.demo_order,
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    /// Every (endpoint, strategy) run in config order. Assumes a valid config.
    pub fn runs(&self) -> Vec<RunSpec> {
        let mut out = Vec::new();
        for entry in &self.strategies {
            let Ok(strategy) = self.strategy_config(entry) else { continue };
            let names: Vec<String> = if entry.endpoints.is_empty() {
                self.endpoints.iter().map(|e| e.name.clone()).collect()
            } else {
                entry.endpoints.clone()
            };
            for endpoint in names {
                out.push(RunSpec { endpoint, strategy: strategy.clone() });
            }
        }
        out
    }

    pub fn endpoint(&self, name: &str) -> Option<&ModelEndpoint> {
        self.endpoints.iter().find(|e| e.name == name)
    }

    /// Exhaustive list of problems; empty when the config can run.
    pub fn validate(&self) -> Vec<Finding> {
        let mut out = Vec::new();
        let mut add = |key: &str, message: String| out.push(Finding { key: key.to_string(), message });

        let ds = &self.dataset;
        let sources = [ds.path.is_some(), ds.synthetic.is_some(), ds.train_path.is_some() || ds.test_path.is_some()];
        match sources.iter().filter(|&&s| s).count() {
            0 => add("dataset", "set one of `path`, `synthetic`, or `train_path` + `test_path`".into()),
            1 => {}
            _ => add("dataset", "`path`, `synthetic` and `train_path`/`test_path` are mutually exclusive".into()),
        }
        for (key, p) in [("dataset.path", &ds.path), ("dataset.train_path", &ds.train_path), ("dataset.test_path", &ds.test_path)] {
            if let Some(p) = p {
                let full = self.resolve(p);
                if !full.is_file() {
                    add(key, format!("file not found: {}", full.display()));
                }
            }
        }
        if ds.train_path.is_some() != ds.test_path.is_some() {
            add("dataset", "`train_path` and `test_path` must be given together".into());
        }
        for canonical in ds.schema_map.keys() {
            if !CANONICAL_COLUMNS.contains(&canonical.as_str()) && !canonical.starts_with(crate::dataset::EXTRA_PREFIX) {
                add(
                    &format!("dataset.schema_map.{canonical}"),
                    format!("unknown column; expected one of {} or an x_ extra", CANONICAL_COLUMNS.join(", ")),
                );
            }
        }
        if let Some(syn) = &ds.synthetic {
            if syn.n == 0 {
                add("dataset.synthetic.n", "must be > 0".into());
            }
            if !(0.0..=1.0).contains(&syn.missing_rate) {
                add("dataset.synthetic.missing_rate", "must be in [0, 1]".into());
            }
            if syn.first_year > syn.last_year {
                add("dataset.synthetic", "first_year is after last_year".into());
            }
        }
        let needs_split = ds.path.is_some() || ds.synthetic.is_some();
        match (&self.split, needs_split) {
            (None, true) => add("split", "required when the dataset is a single file or synthetic".into()),
            (Some(_), false) if ds.train_path.is_some() => add("split", "not allowed with train_path/test_path".into()),
            (Some(s), _) => {
                if s.train_years.start > s.train_years.end || s.test_years.start > s.test_years.end {
                    add("split", "year ranges must have start <= end".into());
                }
                if s.train_years.overlaps(&s.test_years) {
                    add("split", format!("train years {} overlap test years {}", s.train_years, s.test_years));
                }
                if s.train_n == 0 || s.test_n == 0 {
                    add("split", "train_n and test_n must be > 0".into());
                }
            }
            _ => {}
        }

        if let Err(e) = self.serialization.validate() {
            add("serialization", e.to_string());
        }
        if let Some(t) = &self.templates {
            if let Err(e) = PromptTemplates::load(&self.resolve(t)) {
                add("templates", e.to_string());
            }
        }

        if self.endpoints.is_empty() {
            add("endpoints", "at least one endpoint is required".into());
        }
        let mut names = BTreeSet::new();
        for (i, ep) in self.endpoints.iter().enumerate() {
            let key = format!("endpoints[{i}]");
            if ep.name.trim().is_empty() {
                add(&key, "name must not be empty".into());
            } else if !names.insert(ep.name.as_str()) {
                add(&key, format!("duplicate endpoint name {:?}", ep.name));
            }
            for p in ep.problems() {
                add(&key, p);
            }
            if !ep.is_mock() {
                if let Some(var) = ep.api_key_env.as_deref().filter(|v| !v.is_empty()) {
                    if std::env::var_os(var).is_none() {
                        add(&key, format!("environment variable {var} (api_key_env) is not set"));
                    }
                }
            }
        }
        if let Some(name) = &self.retrieval.embedding_endpoint {
            if self.endpoint(name).is_none() {
                add("retrieval.embedding_endpoint", format!("no endpoint named {name:?}"));
            }
        }

        if self.strategies.is_empty() {
            add("strategies", "at least one strategy is required".into());
        }
        for (i, entry) in self.strategies.iter().enumerate() {
            let key = format!("strategies[{i}]");
            match self.strategy_config(entry) {
                Ok(cfg) => {
                    if cfg.kind == StrategyKind::FineTunedExternal && entry.endpoints.is_empty() {
                        add(&key, "fine_tuned_external must name its endpoint(s)".into());
                    }
                }
                Err(e) => add(&key, e),
            }
            for name in &entry.endpoints {
                if self.endpoint(name).is_none() {
                    add(&key, format!("no endpoint named {name:?}"));
                }
            }
        }

        if self.sweep_shots.windows(2).any(|w| w[0] >= w[1]) {
            add("sweep_shots", "must be strictly increasing".into());
        }
        if self.sweep_shots.first() == Some(&0) {
            add("sweep_shots", "shot counts must be > 0".into());
        }
        if self.bonferroni_m == 0 {
            add("bonferroni_m", "must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.audit.abort_fraction) {
            add("audit.abort_fraction", "must be in [0, 1]".into());
        }
        if self.audit.records == Some(0) {
            add("audit.records", "must be > 0".into());
        }
        out
    }

    /// The config with defaults filled in, as TOML.
    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_else(|e| format!("# could not render config: {e}\n"))
    }

    /// SHA-256 of the resolved config.
    pub fn hash(&self) -> String {
        crate::gateway::hash_key(&[&serde_json::to_string(self).expect("config serializes")])
    }
}
