//! Sex × race counterfactual audit: 12 variants per record, paired tests.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Demographics, Protocol, Race, Sex, TriageRecord};
use crate::gateway::{CompletionJob, Gateway, Subject};
use crate::prompting::{build_demos_for, build_prompt_with, DemoSources, PromptBundle, PromptError, PromptTemplates, StrategyConfig};
use crate::serialize::{strip_demographic_sentence, SerializationOptions};
use crate::stats::{bonferroni, friedman, wilcoxon_signed_rank, TestResult};

pub const VARIANTS_PER_RECORD: usize = 12;

/// Fraction of failed cells above which an audit is abandoned.
pub const DEFAULT_ABORT_FRACTION: f64 = 0.2;

/// The 12 (sex, race) cells: Male × races, then Female × races.
pub fn canonical_cells() -> Vec<(Sex, Race)> {
    Sex::ALL.iter().flat_map(|&s| Race::ALL.iter().map(move |&r| (s, r))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterfactualVariant {
    pub base_id: String,
    pub sex: Sex,
    pub race: Race,
}

impl CounterfactualVariant {
    pub fn variant_id(&self) -> String {
        format!("{}#{}/{}", self.base_id, self.sex.name(), self.race.name())
    }

    pub fn demographics(&self) -> Demographics {
        Demographics::new(self.sex, self.race)
    }

    /// `base` with its demographics replaced by this variant's.
    pub fn apply(&self, base: &TriageRecord) -> TriageRecord {
        TriageRecord { demographics: self.demographics(), ..base.clone() }
    }
}

pub fn generate_variants(record: &TriageRecord) -> Vec<CounterfactualVariant> {
    canonical_cells()
        .into_iter()
        .map(|(sex, race)| CounterfactualVariant { base_id: record.id.clone(), sex, race })
        .collect()
}

fn cell_name(sex: Sex, race: Race) -> String {
    format!("{}/{}", sex.name(), race.name())
}

/// Predicted acuity per record (row) and variant (column, canonical order);
/// `None` where the cell failed or was unparseable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditMatrix {
    pub record_ids: Vec<String>,
    pub variant_order: Vec<String>,
    pub values: Vec<Vec<Option<u8>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("{failed} of {total} audit cells failed, above the {limit:.0}% limit")]
    AbortThreshold { failed: usize, total: usize, limit: f64 },
    #[error("audit needs at least one record")]
    Empty,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl AuditMatrix {
    pub fn new(record_ids: Vec<String>, values: Vec<Vec<Option<u8>>>) -> Self {
        let variant_order = canonical_cells().into_iter().map(|(s, r)| cell_name(s, r)).collect();
        Self { record_ids, variant_order, values }
    }

    pub fn rows(&self) -> usize {
        self.values.len()
    }

    pub fn column(&self, sex: Sex, race: Race) -> usize {
        let s = Sex::ALL.iter().position(|&x| x == sex).expect("known sex");
        let r = Race::ALL.iter().position(|&x| x == race).expect("known race");
        s * Race::ALL.len() + r
    }

    pub fn missing_cells(&self) -> usize {
        self.values.iter().flatten().filter(|v| v.is_none()).count()
    }

    /// Rows with every cell present, as reals.
    fn complete_rows(&self) -> (Vec<Vec<f64>>, usize) {
        let mut rows = Vec::new();
        let mut dropped = 0;
        for row in &self.values {
            if row.iter().all(Option::is_some) {
                rows.push(row.iter().map(|v| v.expect("checked") as f64).collect());
            } else {
                dropped += 1;
            }
        }
        (rows, dropped)
    }

    pub fn save(&self, path: &Path) -> Result<(), AuditError> {
        let text = serde_json::to_string_pretty(self).expect("matrix serializes");
        std::fs::write(path, text + "\n").map_err(|e| AuditError::Io { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, AuditError> {
        let io = |message: String| AuditError::Io { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| io(e.to_string()))
    }
}

/// Everything a cell evaluation depends on besides the record.
pub struct AuditSetup<'a> {
    pub strategy: &'a StrategyConfig,
    pub templates: &'a PromptTemplates,
    pub protocol: Protocol,
    /// Query serialization; the demographic sentence is always included.
    pub opts: SerializationOptions,
    /// Demonstration sources; their serialization must be demographic-free.
    pub demos: &'a DemoSources<'a>,
    pub abort_fraction: f64,
}

impl AuditSetup<'_> {
    fn query_opts(&self) -> SerializationOptions {
        SerializationOptions { include_demographics: true, ..self.opts.clone() }
    }
}

/// Prompts for the 12 variants of `record`. Demonstrations are chosen once
/// for the base record so every variant sees the same examples.
pub fn variant_prompts(record: &TriageRecord, setup: &AuditSetup<'_>) -> Result<Vec<(CounterfactualVariant, PromptBundle)>, PromptError> {
    let demos = build_demos_for(setup.strategy, record, setup.demos)?;
    let opts = setup.query_opts();
    generate_variants(record)
        .into_iter()
        .map(|v| {
            let bundle = build_prompt_with(setup.templates, setup.strategy, &v.apply(record), &demos, setup.protocol, &opts)?;
            Ok((v, bundle))
        })
        .collect()
}

/// A prompt rendered to text with the query's demographic sentence removed.
pub fn stripped_prompt_text(bundle: &PromptBundle, opts: &SerializationOptions) -> String {
    let opts = SerializationOptions { include_demographics: true, ..opts.clone() };
    let stripped = PromptBundle { query_text: strip_demographic_sentence(&bundle.query_text, &opts).to_string(), ..bundle.clone() };
    stripped
        .to_messages()
        .iter()
        .map(|m| format!("[{:?}]\n{}", m.role, m.content))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub record_id: String,
    pub variant: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub matrix: AuditMatrix,
    pub failures: Vec<CellFailure>,
}

/// Evaluates all 12 variants of every record through `gateway`.
pub fn run_audit(records: &[TriageRecord], gateway: &Gateway, setup: &AuditSetup<'_>) -> Result<AuditOutcome, AuditError> {
    if records.is_empty() {
        return Err(AuditError::Empty);
    }
    let mut jobs = Vec::with_capacity(records.len() * VARIANTS_PER_RECORD);
    for record in records {
        for (v, bundle) in variant_prompts(record, setup)? {
            let subject = Subject { record: v.apply(record), demographics: v.demographics() };
            jobs.push(CompletionJob { messages: bundle.to_messages(), subject: Some(subject) });
        }
    }
    let results = gateway.complete_batch(&jobs);
    let cells = canonical_cells();
    let mut values = vec![vec![None; VARIANTS_PER_RECORD]; records.len()];
    let mut failures = Vec::new();
    for (i, result) in results.into_iter().enumerate() {
        let (row, col) = (i / VARIANTS_PER_RECORD, i % VARIANTS_PER_RECORD);
        let reason = match result {
            Ok(r) => match r.parsed {
                Some(level) => {
                    values[row][col] = Some(level.get());
                    continue;
                }
                None => "unparseable response".to_string(),
            },
            Err(e) => e.to_string(),
        };
        let (sex, race) = cells[col];
        failures.push(CellFailure { record_id: records[row].id.clone(), variant: cell_name(sex, race), reason });
    }
    let total = jobs.len();
    if failures.len() as f64 > setup.abort_fraction * total as f64 {
        return Err(AuditError::AbortThreshold { failed: failures.len(), total, limit: setup.abort_fraction * 100.0 });
    }
    let ids = records.iter().map(|r| r.id.clone()).collect();
    Ok(AuditOutcome { matrix: AuditMatrix::new(ids, values), failures })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMean {
    pub sex: Sex,
    pub race: Race,
    /// `None` when every entry of the column is missing.
    pub mean: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SexMean {
    pub sex: Sex,
    pub mean: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMeans {
    /// Canonical cell order.
    pub cells: Vec<CellMean>,
    pub sex_marginals: Vec<SexMean>,
}

impl GroupMeans {
    pub fn cell(&self, sex: Sex, race: Race) -> &CellMean {
        self.cells.iter().find(|c| c.sex == sex && c.race == race).expect("all cells present")
    }

    pub fn marginal(&self, sex: Sex) -> &SexMean {
        self.sex_marginals.iter().find(|m| m.sex == sex).expect("both sexes present")
    }
}

pub fn group_means(matrix: &AuditMatrix) -> Result<GroupMeans, AuditError> {
    if matrix.values.is_empty() {
        return Err(AuditError::Empty);
    }
    let mut cells = Vec::with_capacity(VARIANTS_PER_RECORD);
    for (col, (sex, race)) in canonical_cells().into_iter().enumerate() {
        let present: Vec<f64> = matrix.values.iter().filter_map(|row| row[col]).map(f64::from).collect();
        let n = present.len();
        let mean = (n > 0).then(|| present.iter().sum::<f64>() / n as f64);
        cells.push(CellMean { sex, race, mean, n });
    }
    let sex_marginals = Sex::ALL
        .iter()
        .map(|&sex| {
            let of_sex: Vec<&CellMean> = cells.iter().filter(|c| c.sex == sex && c.mean.is_some()).collect();
            let n: usize = of_sex.iter().map(|c| c.n).sum();
            let mean = (n > 0).then(|| of_sex.iter().map(|c| c.mean.expect("filtered") * c.n as f64).sum::<f64>() / n as f64);
            SexMean { sex, mean, n }
        })
        .collect();
    Ok(GroupMeans { cells, sex_marginals })
}

/// One row of the significance section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditTest {
    pub result: Option<TestResult>,
    pub p_corrected: Option<f64>,
    /// Records dropped because a needed cell was missing.
    pub dropped: usize,
    pub error: Option<String>,
}

impl AuditTest {
    fn from(result: Result<TestResult, crate::stats::StatsError>, dropped: usize, m: usize) -> Self {
        match result {
            Ok(r) => Self { p_corrected: Some(bonferroni(r.p_value, m)), result: Some(r), dropped, error: None },
            Err(e) => Self { result: None, p_corrected: None, dropped, error: Some(e.to_string()) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditTests {
    /// Wilcoxon on per-record (male mean − female mean) over races.
    pub sex: AuditTest,
    /// Friedman over six sex-averaged race columns.
    pub race: AuditTest,
    /// Friedman over all 12 cells.
    pub sex_race: AuditTest,
    pub bonferroni_m: usize,
}

pub fn audit_tests(matrix: &AuditMatrix, bonferroni_m: usize) -> AuditTests {
    let (rows, dropped) = matrix.complete_rows();
    let k = Race::ALL.len();
    let diffs: Vec<f64> = rows
        .iter()
        .map(|r| (r[..k].iter().sum::<f64>() - r[k..].iter().sum::<f64>()) / k as f64)
        .collect();
    let race_cols: Vec<Vec<f64>> = rows.iter().map(|r| (0..k).map(|j| (r[j] + r[k + j]) / 2.0).collect()).collect();
    AuditTests {
        sex: AuditTest::from(wilcoxon_signed_rank(&diffs), dropped, bonferroni_m),
        race: AuditTest::from(friedman(&race_cols), dropped, bonferroni_m),
        sex_race: AuditTest::from(friedman(&rows), dropped, bonferroni_m),
        bonferroni_m,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRef {
    pub sex: Sex,
    pub race: Race,
}

/// Group means, tests and markers for one (model, strategy) column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub label: String,
    pub n_records: usize,
    pub missing_cells: usize,
    pub means: GroupMeans,
    pub tests: AuditTests,
    /// Cells with the lowest mean acuity (most urgent). Empty when all cells tie.
    pub most_prioritized: Vec<CellRef>,
    /// Cells with the highest mean acuity. Empty when all cells tie.
    pub least_prioritized: Vec<CellRef>,
    /// Cell whose mean departs most from the mean of the other eleven.
    pub most_affected: Option<CellRef>,
}

impl AuditReport {
    pub fn new(label: impl Into<String>, matrix: &AuditMatrix, bonferroni_m: usize) -> Result<Self, AuditError> {
        let means = group_means(matrix)?;
        let present: Vec<(&CellMean, f64)> = means.cells.iter().filter_map(|c| c.mean.map(|m| (c, m))).collect();
        let lo = present.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let hi = present.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let pick = |target: f64| -> Vec<CellRef> {
            if hi - lo <= 0.0 {
                return Vec::new();
            }
            present.iter().filter(|p| p.1 == target).map(|p| CellRef { sex: p.0.sex, race: p.0.race }).collect()
        };
        let most_affected = if present.len() > 1 && hi > lo {
            let total: f64 = present.iter().map(|p| p.1).sum();
            let others = (present.len() - 1) as f64;
            let mut best: Option<(f64, &CellMean)> = None;
            for (c, m) in &present {
                let gap = (m - (total - m) / others).abs();
                if best.is_none_or(|b| gap > b.0) {
                    best = Some((gap, c));
                }
            }
            best.map(|(_, c)| CellRef { sex: c.sex, race: c.race })
        } else {
            None
        };
        Ok(Self {
            label: label.into(),
            n_records: matrix.rows(),
            missing_cells: matrix.missing_cells(),
            most_prioritized: pick(lo),
            least_prioritized: pick(hi),
            most_affected,
            tests: audit_tests(matrix, bonferroni_m),
            means,
        })
    }
}

fn sex_row_label(sex: Sex) -> &'static str {
    match sex {
        Sex::Male => "Men",
        Sex::Female => "Women",
    }
}

/// Race rows in table order (alphabetical by label).
fn table_races() -> Vec<Race> {
    let mut r = Race::ALL.to_vec();
    r.sort_by_key(|r| r.label());
    r
}

/// `<0.01**`, `0.028*`, `0.520`.
pub fn format_p(p: f64) -> String {
    if p < 0.01 {
        "<0.01**".into()
    } else if p < 0.05 {
        format!("{p:.3}*")
    } else {
        format!("{p:.3}")
    }
}

/// Table with one column per report: sex marginal rows each followed by
/// their six race cells, then Bonferroni-corrected p-values for the Sex,
/// Race and Sex & Race tests. `(+)` marks the most prioritized cell(s) of a
/// column, `(-)` the least prioritized.
pub fn render_audit_table(reports: &[AuditReport]) -> String {
    let label_w = 22;
    let col_w = reports.iter().map(|r| r.label.chars().count()).max().unwrap_or(0).max(11);
    let mut lines = Vec::new();
    let mut header = format!("{:<label_w$}", "Demographic");
    for r in reports {
        header.push_str(&format!(" {:>col_w$}", r.label));
    }
    let rule = "-".repeat(header.chars().count());
    lines.push(header);
    lines.push(rule.clone());
    let fmt_mean = |m: Option<f64>| m.map_or("NA".to_string(), |v| format!("{v:.3}"));
    for sex in Sex::ALL {
        let mut row = format!("{:<label_w$}", sex_row_label(sex));
        for r in reports {
            row.push_str(&format!(" {:>col_w$}", fmt_mean(r.means.marginal(sex).mean)));
        }
        lines.push(row);
        for race in table_races() {
            let label = match race {
                Race::NativeHawaiianPacificIslander => "Native Hawaiian",
                other => other.label(),
            };
            let mut row = format!("{:<label_w$}", format!("  {label}"));
            for r in reports {
                let mut cell = fmt_mean(r.means.cell(sex, race).mean);
                if r.most_prioritized.iter().any(|c| c.sex == sex && c.race == race) {
                    cell.push_str("(+)");
                } else if r.least_prioritized.iter().any(|c| c.sex == sex && c.race == race) {
                    cell.push_str("(-)");
                }
                row.push_str(&format!(" {cell:>col_w$}"));
            }
            lines.push(row);
        }
        lines.push(rule.clone());
    }
    for (name, pick) in [
        ("Sex", (|t: &AuditTests| &t.sex) as fn(&AuditTests) -> &AuditTest),
        ("Race", |t: &AuditTests| &t.race),
        ("Sex & Race", |t: &AuditTests| &t.sex_race),
    ] {
        let mut row = format!("{:<label_w$}", format!("  {name}"));
        for r in reports {
            let cell = pick(&r.tests).p_corrected.map_or("NA".to_string(), format_p);
            row.push_str(&format!(" {cell:>col_w$}"));
        }
        lines.push(row);
    }
    lines.push(rule);
    let ms: Vec<String> = reports.iter().map(|r| r.tests.bonferroni_m.to_string()).collect();
    lines.push(format!("p-values Bonferroni-corrected (m = {}); * p < 0.05, ** p < 0.01", ms.join(", ")));
    lines.join("\n") + "\n"
}
