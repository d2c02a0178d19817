use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Finding, RunSpec};
use super::manifest::{Manifest, RunInfo};
use super::workspace::{RunResult, Workspace};
use super::ExperimentError;
use crate::counterfactual::{render_audit_table, AuditReport, CellFailure};
use crate::dataset::{load_dataset, write_dataset, AcuityLevel, LoadOptions};
use crate::metrics::{level_distribution, render_metric_table, MetricReport};
use crate::prompting::{StrategyConfig, StrategyKind};

/// Result of `validate`: every finding plus the config with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    pub resolved_toml: Option<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Where a command wrote its artifacts.
#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub dir: PathBuf,
    pub manifest: Manifest,
    /// Human-readable summary table.
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub accepted: usize,
    pub rejected: usize,
    pub rejections_path: PathBuf,
}

/// Result of `report`: re-rendered tables and any integrity problems.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportCheck {
    pub command: String,
    pub text: String,
    pub problems: Vec<String>,
}

/// Metrics of one run without its per-record predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetricsEntry {
    label: String,
    endpoint: String,
    strategy: StrategyConfig,
    metrics: MetricReport,
}

impl From<&RunResult> for MetricsEntry {
    fn from(r: &RunResult) -> Self {
        Self { label: r.label.clone(), endpoint: r.endpoint.clone(), strategy: r.strategy.clone(), metrics: r.metrics.clone() }
    }
}

/// Collects files written under one output directory.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    started: u64,
}

impl Outputs {
    fn create(dir: PathBuf) -> Result<Self, ExperimentError> {
        std::fs::create_dir_all(&dir).map_err(|e| ExperimentError::io(&dir, e))?;
        Ok(Self { dir, files: Vec::new(), started: unix_now() })
    }

    fn write(&mut self, rel: &str, content: &str) -> Result<(), ExperimentError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| ExperimentError::io(parent, e))?;
        }
        std::fs::write(&path, content).map_err(|e| ExperimentError::io(&path, e))?;
        self.files.push(rel.to_string());
        Ok(())
    }

    fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<(), ExperimentError> {
        self.write(rel, &(serde_json::to_string_pretty(value).expect("output serializes") + "\n"))
    }

    fn finish(self, command: &str, ws: &Workspace, runs: Vec<String>, summary: String) -> Result<CommandOutput, ExperimentError> {
        let run_info = RunInfo {
            started_unix: self.started,
            finished_unix: unix_now(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            gateway_stats: ws.gateways.iter().map(|(k, g)| (k.clone(), g.stats())).collect(),
        };
        let manifest = Manifest::build(&self.dir, command, ws.config.hash(), ws.config.seed, runs, &self.files, run_info)?;
        manifest.save(&self.dir)?;
        Ok(CommandOutput { dir: self.dir, manifest, summary })
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

/// Parses and validates a config file. With `check_endpoints`, also tries a
/// TCP connection to every non-mock endpoint.
pub fn cmd_validate(path: &Path, check_endpoints: bool) -> ValidationReport {
    let config = match ExperimentConfig::load(path) {
        Ok(c) => c,
        Err(ExperimentError::Invalid(findings)) => return ValidationReport { findings, resolved_toml: None },
        Err(e) => return ValidationReport { findings: vec![Finding { key: "<config>".into(), message: e.to_string() }], resolved_toml: None },
    };
    let mut findings = config.validate();
    if check_endpoints {
        for (i, ep) in config.endpoints.iter().enumerate().filter(|(_, e)| !e.is_mock()) {
            if let Err(message) = probe(&ep.base_url) {
                findings.push(Finding { key: format!("endpoints[{i}]"), message });
            }
        }
    }
    ValidationReport { findings, resolved_toml: Some(config.resolved_toml()) }
}

fn probe(base_url: &str) -> Result<(), String> {
    let (scheme, rest) = base_url.split_once("://").ok_or_else(|| format!("{base_url:?} has no scheme"))?;
    let authority = rest.split('/').next().unwrap_or_default();
    let host_port = if authority.rsplit_once(':').is_some_and(|(_, p)| p.parse::<u16>().is_ok()) {
        authority.to_string()
    } else {
        format!("{authority}:{}", if scheme == "https" { 443 } else { 80 })
    };
    let addr = host_port
        .to_socket_addrs()
        .map_err(|e| format!("cannot resolve {host_port}: {e}"))?
        .next()
        .ok_or_else(|| format!("cannot resolve {host_port}"))?;
    TcpStream::connect_timeout(&addr, Duration::from_secs(5)).map_err(|e| format!("{host_port} unreachable: {e}"))?;
    Ok(())
}

/// Loads a foreign file and writes it in canonical form, with rejected rows
/// listed next to it in `<output>.rejections.jsonl`.
pub fn cmd_ingest(input: &Path, opts: &LoadOptions, output: &Path) -> Result<IngestSummary, ExperimentError> {
    let outcome = load_dataset(input, opts)?;
    write_dataset(&outcome.dataset, output, ',')?;
    let mut rejections_path = output.as_os_str().to_owned();
    rejections_path.push(".rejections.jsonl");
    let rejections_path = PathBuf::from(rejections_path);
    let body: String = outcome.rejections.iter().map(|r| serde_json::to_string(r).expect("rejection serializes") + "\n").collect();
    std::fs::write(&rejections_path, body).map_err(|e| ExperimentError::io(&rejections_path, e))?;
    Ok(IngestSummary { accepted: outcome.dataset.len(), rejected: outcome.rejections.len(), rejections_path })
}

fn write_evaluation(out: &mut Outputs, ws: &Workspace, results: &[RunResult]) -> Result<String, ExperimentError> {
    let entries: Vec<MetricsEntry> = results.iter().map(MetricsEntry::from).collect();
    out.write_json("metrics.json", &entries)?;
    let table = render_metric_table(&results.iter().map(|r| (r.label.clone(), r.metrics.clone())).collect::<Vec<_>>());
    out.write("metrics_table.txt", &table)?;

    let mut csv = String::from("label,1,2,3,4,5\n");
    let gold: Vec<AcuityLevel> = ws.test.records.iter().filter_map(|r| r.label).collect();
    let mut dist_row = |label: &str, levels: &[AcuityLevel]| {
        if let Ok(d) = level_distribution(levels) {
            csv.push_str(label);
            for v in d {
                csv.push_str(&format!(",{v:.4}"));
            }
            csv.push('\n');
        }
    };
    dist_row("gold", &gold);
    for r in results {
        let predicted: Vec<AcuityLevel> = r.predictions.iter().filter_map(|p| p.predicted.and_then(|l| AcuityLevel::new(l).ok())).collect();
        dist_row(&r.label, &predicted);
    }
    out.write("level_distribution.csv", &csv)?;

    for r in results {
        let body: String = r.predictions.iter().map(|p| serde_json::to_string(p).expect("row serializes") + "\n").collect();
        out.write(&format!("predictions/{}.jsonl", file_stem(&r.label)), &body)?;
    }
    if let Some(report) = &ws.split_report {
        out.write_json("split.json", report)?;
    }
    Ok(table)
}

/// Evaluates every configured run and writes metrics, tables, predictions
/// and a manifest to `<output_dir>/evaluate`.
pub fn cmd_evaluate(config: &ExperimentConfig) -> Result<CommandOutput, ExperimentError> {
    let ws = Workspace::open(config.clone())?;
    let runs = ws.config.runs();
    let results = runs.iter().map(|spec| ws.evaluate(spec)).collect::<Result<Vec<_>, _>>()?;
    let mut out = Outputs::create(ws.config.output_root().join("evaluate"))?;
    let table = write_evaluation(&mut out, &ws, &results)?;
    out.finish("evaluate", &ws, runs.iter().map(RunSpec::label).collect(), table)
}

/// Runs the counterfactual audit for every configured run and writes the
/// matrices, reports and bias table to `<output_dir>/audit`.
pub fn cmd_audit(config: &ExperimentConfig) -> Result<CommandOutput, ExperimentError> {
    let ws = Workspace::open(config.clone())?;
    let runs = ws.config.runs();
    let mut out = Outputs::create(ws.config.output_root().join("audit"))?;
    let mut reports = Vec::new();
    let mut failures: Vec<(String, Vec<CellFailure>)> = Vec::new();
    for spec in &runs {
        let label = spec.label();
        let outcome = ws.audit(spec)?;
        out.write_json(&format!("matrices/{}.json", file_stem(&label)), &outcome.matrix)?;
        reports.push(AuditReport::new(&label, &outcome.matrix, ws.config.bonferroni_m)?);
        failures.push((label, outcome.failures));
    }
    out.write_json("report.json", &reports)?;
    out.write_json("failures.json", &failures)?;
    let table = render_audit_table(&reports);
    out.write("bias_table.txt", &table)?;
    out.finish("audit", &ws, runs.iter().map(RunSpec::label).collect(), table)
}

/// Re-evaluates every shot-based strategy at each `sweep_shots` count and
/// writes `<output_dir>/sweep/sweep.csv`.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<CommandOutput, ExperimentError> {
    let mut config = config.clone();
    let findings: Vec<Finding> = if config.sweep_shots.is_empty() {
        vec![Finding { key: "sweep_shots".into(), message: "must list at least one shot count".into() }]
    } else {
        Vec::new()
    };
    if !findings.is_empty() {
        return Err(ExperimentError::Invalid(findings));
    }
    // expand shot-based strategies into one entry per count so that the
    // workspace prepares embeddings for them
    let mut expanded = Vec::new();
    for entry in &config.strategies {
        let Ok(kind) = entry.kind.parse::<StrategyKind>() else {
            expanded.push(entry.clone());
            continue;
        };
        if kind.uses_shots() {
            for &shots in &config.sweep_shots {
                expanded.push(super::StrategyEntry { shots, ..entry.clone() });
            }
        }
    }
    config.strategies = expanded;
    let ws = Workspace::open(config)?;
    let runs = ws.config.runs();
    let results = runs.iter().map(|spec| ws.evaluate(spec)).collect::<Result<Vec<_>, _>>()?;
    let mut out = Outputs::create(ws.config.output_root().join("sweep"))?;
    let mut csv = String::from("endpoint,strategy,shots,qwk,accuracy,macro_f1,mse,n,excluded\n");
    for r in &results {
        let m = &r.metrics;
        csv.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}\n",
            r.endpoint, r.strategy.kind, r.strategy.shots, m.qwk, m.accuracy, m.macro_f1, m.mse, m.n, m.excluded_count
        ));
    }
    out.write("sweep.csv", &csv)?;
    out.write_json("metrics.json", &results.iter().map(MetricsEntry::from).collect::<Vec<_>>())?;
    out.finish("sweep", &ws, runs.iter().map(RunSpec::label).collect(), csv)
}

/// Checks a command output directory against its manifest and re-renders
/// its table from the stored JSON.
pub fn cmd_report(dir: &Path) -> Result<ReportCheck, ExperimentError> {
    let manifest = Manifest::load(dir)?;
    let problems = manifest.verify(dir);
    let read = |name: &str| -> Result<String, ExperimentError> {
        let path = dir.join(name);
        std::fs::read_to_string(&path).map_err(|e| ExperimentError::io(&path, e))
    };
    let text = match manifest.command.as_str() {
        "evaluate" => {
            let entries: Vec<MetricsEntry> =
                serde_json::from_str(&read("metrics.json")?).map_err(|e| ExperimentError::io(&dir.join("metrics.json"), e))?;
            render_metric_table(&entries.into_iter().map(|e| (e.label, e.metrics)).collect::<Vec<_>>())
        }
        "audit" => {
            let reports: Vec<AuditReport> =
                serde_json::from_str(&read("report.json")?).map_err(|e| ExperimentError::io(&dir.join("report.json"), e))?;
            render_audit_table(&reports)
        }
        _ => read("sweep.csv")?,
    };
    Ok(ReportCheck { command: manifest.command, text, problems })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(dir: &Path, strategies: &str) -> ExperimentConfig {
        let text = format!(
            r#"
seed = 7
output_dir = "out"
bonferroni_m = 2

[dataset]
protocol = "esi"
synthetic = {{ n = 600 }}

[split]
train_years = {{ start = 2014, end = 2017 }}
test_years = {{ start = 2018, end = 2019 }}
train_n = 150
test_n = 40

[audit]
records = 10

[[endpoints]]
name = "mock"
base_url = "mock://rule_based"
max_in_flight = 4
{strategies}
"#
        );
        ExperimentConfig::from_toml(&text, dir).unwrap()
    }

    const STRATS: &str = r#"
[[strategies]]
kind = "zero_shot_vanilla"

[[strategies]]
kind = "kate_cot"
shots = 3

[[strategies]]
kind = "auto_cot"
autocot_clusters = 4
"#;

    #[test]
    fn evaluate_writes_outputs_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), STRATS);
        assert_eq!(cfg.validate(), vec![]);
        let first = cmd_evaluate(&cfg).unwrap();
        assert_eq!(first.manifest.runs, vec!["mock/zero_shot_vanilla", "mock/kate_cot@3", "mock/auto_cot@4"]);
        assert!(first.dir.join("metrics_table.txt").is_file());
        assert!(first.dir.join("predictions/mock_kate_cot_3.jsonl").is_file());
        let second = cmd_evaluate(&cfg).unwrap();
        assert_eq!(first.manifest.outputs_digest, second.manifest.outputs_digest);
        assert_eq!(second.manifest.run_info.gateway_stats["mock"].network_calls, 0, "{:?}", second.manifest.run_info.gateway_stats);

        let check = cmd_report(&first.dir).unwrap();
        assert!(check.problems.is_empty(), "{:?}", check.problems);
        assert_eq!(check.text, first.summary);
    }

    #[test]
    fn audit_writes_table() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), "[[strategies]]\nkind = \"few_shot\"\nshots = 2\n");
        let out = cmd_audit(&cfg).unwrap();
        let table = std::fs::read_to_string(out.dir.join("bias_table.txt")).unwrap();
        assert!(table.contains("Sex & Race"));
        assert!(out.dir.join("matrices/mock_few_shot_2.json").is_file());
        assert_eq!(cmd_report(&out.dir).unwrap().text, table);
    }

    #[test]
    fn sweep_expands_shot_counts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(dir.path(), "[[strategies]]\nkind = \"kate\"\nshots = 1\n[[strategies]]\nkind = \"zero_shot_cot\"\n");
        cfg.sweep_shots = vec![1, 2, 4];
        let out = cmd_sweep(&cfg).unwrap();
        let csv = std::fs::read_to_string(out.dir.join("sweep.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(3).unwrap().starts_with("mock,kate,4,"));
    }

    #[test]
    fn validation_is_exhaustive() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(dir.path(), "[[strategies]]\nkind = \"kate_cat\"\n[[strategies]]\nkind = \"few_shot\"\nendpoints = [\"nope\"]\n");
        cfg.split.as_mut().unwrap().test_years.start = 2016;
        cfg.bonferroni_m = 0;
        cfg.sweep_shots = vec![5, 5];
        let keys: Vec<String> = cfg.validate().into_iter().map(|f| f.key).collect();
        for k in ["split", "strategies[0]", "strategies[1]", "sweep_shots", "bonferroni_m"] {
            assert!(keys.iter().any(|x| x == k), "missing {k} in {keys:?}");
        }
        let unknown = cfg.validate().into_iter().find(|f| f.key == "strategies[0]").unwrap();
        assert!(unknown.message.contains("kate_cot"), "{}", unknown.message);
    }

    #[test]
    fn validate_reports_parse_errors_and_resolves_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "seed = 1\nbogus = true\n").unwrap();
        let report = cmd_validate(&path, false);
        assert!(!report.is_valid());
        assert!(report.resolved_toml.is_none());

        let good = dir.path().join("good.toml");
        let text = toml::to_string(&config(dir.path(), STRATS)).unwrap();
        std::fs::write(&good, text).unwrap();
        let report = cmd_validate(&good, false);
        assert!(report.is_valid(), "{:?}", report.findings);
        assert!(report.resolved_toml.unwrap().contains("abort_fraction"));
    }

    #[test]
    fn ingest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.csv");
        std::fs::write(&input, "id,chief_complaint,acuity\na,cough,3\nb,,2\n").unwrap();
        let output = dir.path().join("out.csv");
        let s = cmd_ingest(&input, &LoadOptions::new(crate::dataset::Protocol::Esi), &output).unwrap();
        assert_eq!((s.accepted, s.rejected), (1, 1));
        assert_eq!(std::fs::read_to_string(&s.rejections_path).unwrap().lines().count(), 1);
    }
}
