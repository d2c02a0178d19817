//! Reading and writing canonical dataset files.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::record::{
    AcuityLevel, Demographics, PlausibilityWindows, Protocol, Race, Sex, TriageRecord, VitalKind,
    VitalSigns,
};
use super::{Dataset, DatasetError};

/// Canonical columns, in file order. Extras (`x_*`) follow.
pub const CANONICAL_COLUMNS: [&str; 13] = [
    "id",
    "cohort_year",
    "temperature",
    "heart_rate",
    "respiratory_rate",
    "systolic_bp",
    "diastolic_bp",
    "spo2",
    "pain",
    "chief_complaint",
    "acuity",
    "sex",
    "race",
];

pub const REQUIRED_COLUMNS: [&str; 2] = ["id", "chief_complaint"];

pub const EXTRA_PREFIX: &str = "x_";

/// Maps canonical column names onto the headers used by a foreign file.
pub type SchemaMap = BTreeMap<String, String>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadOptions {
    pub protocol: Protocol,
    #[serde(default)]
    pub schema_map: SchemaMap,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub windows: PlausibilityWindows,
    #[serde(default)]
    pub name: Option<String>,
}

fn default_delimiter() -> char {
    ','
}

impl LoadOptions {
    pub fn new(protocol: Protocol) -> Self {
        Self {
            protocol,
            schema_map: SchemaMap::new(),
            delimiter: ',',
            windows: PlausibilityWindows::default(),
            name: None,
        }
    }
}

/// Why a single row was not turned into a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RejectReason {
    #[error("invalid acuity {value:?} (must be 1-5)")]
    InvalidAcuity { value: String },
    #[error("{field} value {value} outside plausibility window")]
    OutOfRangeVital { field: String, value: f64 },
    #[error("{field} value {value:?} is not a number")]
    InvalidNumber { field: String, value: String },
    #[error("pain {value:?} must be an integer 0-10")]
    InvalidPain { value: String },
    #[error("cohort_year {value:?} is not an integer year")]
    InvalidYear { value: String },
    #[error("{field} value {value:?} is not a recognised category")]
    InvalidDemographic { field: String, value: String },
    #[error("empty id")]
    EmptyId,
    #[error("empty chief complaint")]
    EmptyChiefComplaint,
    #[error("duplicate id {id:?}")]
    DuplicateId { id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub id: Option<String>,
    pub reason: RejectReason,
}

#[derive(Debug, Clone)]
pub struct LoadOutcome {
    pub dataset: Dataset,
    pub rejections: Vec<Rejection>,
}

/// Loads a delimiter-separated (or `.jsonl`) dataset file into a validated [`Dataset`].
///
/// Every data row either becomes a record or lands in `rejections` with its
/// row number and reason. Empty cells are missing values, never zero.
pub fn load_dataset(path: &Path, opts: &LoadOptions) -> Result<LoadOutcome, DatasetError> {
    let unreadable = |e: std::io::Error| DatasetError::FileUnreadable {
        path: path.display().to_string(),
        source: e,
    };
    let file = File::open(path).map_err(unreadable)?;
    let (header, rows) = if is_jsonl(path) {
        read_jsonl(BufReader::new(file))?
    } else {
        read_delimited(file, opts.delimiter)?
    };
    let name = opts.name.clone().unwrap_or_else(|| {
        path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    });
    from_rows(&name, &header, rows, opts)
}

fn is_jsonl(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("jsonl") | Some("ndjson")
    )
}

type Rows = Vec<Vec<Option<String>>>;

fn read_delimited(file: File, delimiter: char) -> Result<(Vec<String>, Rows), DatasetError> {
    let delim = u8::try_from(delimiter).map_err(|_| DatasetError::Parse {
        line: 0,
        message: format!("delimiter {delimiter:?} is not a single byte"),
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delim)
        .flexible(false)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        rows.push(rec.iter().map(|c| Some(c.to_string())).collect());
    }
    Ok((header, rows))
}

fn csv_error(e: csv::Error) -> DatasetError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    DatasetError::Parse { line, message: e.to_string() }
}

fn read_jsonl(reader: impl BufRead) -> Result<(Vec<String>, Rows), DatasetError> {
    let mut header: Vec<String> = Vec::new();
    let mut objects = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DatasetError::Parse { line: idx + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&line)
            .map_err(|e| DatasetError::Parse { line: idx + 1, message: e.to_string() })?;
        for key in obj.keys() {
            if !header.contains(key) {
                header.push(key.clone());
            }
        }
        objects.push(obj);
    }
    let rows = objects
        .into_iter()
        .map(|obj| {
            header
                .iter()
                .map(|h| match obj.get(h) {
                    None | Some(serde_json::Value::Null) => None,
                    Some(serde_json::Value::String(s)) => Some(s.clone()),
                    Some(other) => Some(other.to_string()),
                })
                .collect()
        })
        .collect();
    Ok((header, rows))
}

/// Resolves which source column feeds each canonical column.
struct ColumnIndex {
    canonical: HashMap<String, usize>,
    /// (canonical extra name, source index) in source-file order.
    extras: Vec<(String, usize)>,
}

fn resolve_columns(header: &[String], schema_map: &SchemaMap) -> Result<ColumnIndex, DatasetError> {
    let position = |name: &str| header.iter().position(|h| h == name);
    let reverse: HashMap<&str, &str> =
        schema_map.iter().map(|(canon, src)| (src.as_str(), canon.as_str())).collect();

    let mut canonical = HashMap::new();
    for col in CANONICAL_COLUMNS {
        let source = schema_map.get(col).map(String::as_str).unwrap_or(col);
        if let Some(idx) = position(source) {
            canonical.insert(col.to_string(), idx);
        }
    }
    for col in REQUIRED_COLUMNS {
        if !canonical.contains_key(col) {
            let source = schema_map.get(col).cloned().unwrap_or_else(|| col.to_string());
            return Err(DatasetError::MissingRequiredColumn(source));
        }
    }
    let mut extras = Vec::new();
    for (idx, h) in header.iter().enumerate() {
        let canon = reverse.get(h.as_str()).copied().unwrap_or(h.as_str());
        if canon.starts_with(EXTRA_PREFIX) {
            extras.push((canon.to_string(), idx));
        }
    }
    Ok(ColumnIndex { canonical, extras })
}

fn from_rows(
    name: &str,
    header: &[String],
    rows: Rows,
    opts: &LoadOptions,
) -> Result<LoadOutcome, DatasetError> {
    let columns = resolve_columns(header, &opts.schema_map)?;
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    let mut rejections = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        let cell = |col: &str| -> Option<&str> {
            columns
                .canonical
                .get(col)
                .and_then(|&idx| row.get(idx))
                .and_then(|c| c.as_deref())
                .map(str::trim)
                .filter(|c| !c.is_empty())
        };
        let row_id = cell("id").map(str::to_string);
        let result = parse_row(&cell, &columns.extras, &row, &opts.windows).and_then(|rec| {
            if seen.contains(&rec.id) {
                Err(RejectReason::DuplicateId { id: rec.id.clone() })
            } else {
                Ok(rec)
            }
        });
        match result {
            Ok(rec) => {
                seen.insert(rec.id.clone());
                records.push(rec);
            }
            Err(reason) => rejections.push(Rejection { row: i + 1, id: row_id, reason }),
        }
    }
    let extra_columns = columns.extras.iter().map(|(n, _)| n.clone()).collect();
    let dataset = Dataset::new(name, opts.protocol, extra_columns, records)?;
    Ok(LoadOutcome { dataset, rejections })
}

fn parse_row<'a>(
    cell: &dyn Fn(&str) -> Option<&'a str>,
    extras: &[(String, usize)],
    row: &[Option<String>],
    windows: &PlausibilityWindows,
) -> Result<TriageRecord, RejectReason> {
    let id = cell("id").ok_or(RejectReason::EmptyId)?.to_string();
    let chief_complaint = cell("chief_complaint").ok_or(RejectReason::EmptyChiefComplaint)?.to_string();

    let cohort_year = cell("cohort_year")
        .map(|v| {
            v.parse::<i32>()
                .ok()
                .or_else(|| v.parse::<f64>().ok().filter(|f| f.fract() == 0.0).map(|f| f as i32))
                .ok_or_else(|| RejectReason::InvalidYear { value: v.to_string() })
        })
        .transpose()?;

    let mut vitals = VitalSigns::default();
    for kind in VitalKind::ALL {
        let field = kind.column();
        if let Some(raw) = cell(field) {
            let value: f64 = raw.parse().map_err(|_| RejectReason::InvalidNumber {
                field: field.to_string(),
                value: raw.to_string(),
            })?;
            if !windows.window(kind).contains(value) {
                return Err(RejectReason::OutOfRangeVital { field: field.to_string(), value });
            }
            vitals.set(kind, Some(value));
        }
    }

    let pain = cell("pain")
        .map(|raw| {
            let invalid = || RejectReason::InvalidPain { value: raw.to_string() };
            let v: f64 = raw.parse().map_err(|_| invalid())?;
            if v.fract() != 0.0 || !(0.0..=10.0).contains(&v) {
                return Err(invalid());
            }
            Ok(v as u8)
        })
        .transpose()?;

    let label = cell("acuity")
        .map(|raw| {
            raw.parse::<AcuityLevel>()
                .map_err(|_| RejectReason::InvalidAcuity { value: raw.to_string() })
        })
        .transpose()?;

    let sex = cell("sex")
        .map(|raw| {
            raw.parse::<Sex>().map_err(|e| RejectReason::InvalidDemographic {
                field: e.field.to_string(),
                value: e.value,
            })
        })
        .transpose()?;
    let race = cell("race")
        .map(|raw| {
            raw.parse::<Race>().map_err(|e| RejectReason::InvalidDemographic {
                field: e.field.to_string(),
                value: e.value,
            })
        })
        .transpose()?;

    let mut extra_map = IndexMap::new();
    for (name, idx) in extras {
        if let Some(v) = row.get(*idx).and_then(|c| c.as_deref()).map(str::trim).filter(|c| !c.is_empty()) {
            extra_map.insert(name.clone(), v.to_string());
        }
    }

    Ok(TriageRecord {
        id,
        cohort_year,
        vitals,
        pain,
        chief_complaint,
        extras: extra_map,
        label,
        demographics: Demographics { sex, race },
    })
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `dataset` as a canonical delimiter-separated file.
pub fn write_dataset(dataset: &Dataset, path: &Path, delimiter: char) -> Result<(), DatasetError> {
    let unwritable = |e: std::io::Error| DatasetError::FileUnreadable {
        path: path.display().to_string(),
        source: e,
    };
    let mut buf = Vec::new();
    write_dataset_to(dataset, &mut buf, delimiter)?;
    let mut f = File::create(path).map_err(unwritable)?;
    f.write_all(&buf).map_err(unwritable)?;
    Ok(())
}

pub fn write_dataset_to(dataset: &Dataset, out: &mut impl Write, delimiter: char) -> Result<(), DatasetError> {
    let delim = u8::try_from(delimiter).map_err(|_| DatasetError::Parse {
        line: 0,
        message: format!("delimiter {delimiter:?} is not a single byte"),
    })?;
    let mut writer = csv::WriterBuilder::new().delimiter(delim).from_writer(out);
    let mut header: Vec<&str> = CANONICAL_COLUMNS.to_vec();
    header.extend(dataset.extra_columns.iter().map(String::as_str));
    writer.write_record(&header).map_err(csv_error)?;
    for r in &dataset.records {
        let mut row = vec![r.id.clone(), fmt_opt(r.cohort_year)];
        for kind in VitalKind::ALL {
            row.push(fmt_opt(r.vitals.get(kind)));
        }
        row.push(fmt_opt(r.pain));
        row.push(r.chief_complaint.clone());
        row.push(fmt_opt(r.label));
        row.push(r.demographics.sex.map(|s| s.name().to_string()).unwrap_or_default());
        row.push(r.demographics.race.map(|s| s.name().to_string()).unwrap_or_default());
        for col in &dataset.extra_columns {
            row.push(r.extras.get(col).cloned().unwrap_or_default());
        }
        writer.write_record(&row).map_err(csv_error)?;
    }
    writer.flush().map_err(|e| DatasetError::Parse { line: 0, message: e.to_string() })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_str(content: &str, opts: &LoadOptions) -> Result<LoadOutcome, DatasetError> {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        load_dataset(f.path(), opts)
    }

    #[test]
    fn direct_field_mapping() {
        let out = load_str("id,cohort_year,chief_complaint,acuity\na,2015,chest pain,2\n", &LoadOptions::new(Protocol::Esi)).unwrap();
        let r = &out.dataset.records[0];
        assert_eq!(r.id, "a");
        assert_eq!(r.cohort_year, Some(2015));
        assert_eq!(r.chief_complaint, "chest pain");
        assert_eq!(r.label.unwrap().get(), 2);
        assert!(out.rejections.is_empty());
    }

    #[test]
    fn invalid_acuity_rejected() {
        let out = load_str("id,chief_complaint,acuity\na,cough,7\nb,cough,3\n", &LoadOptions::new(Protocol::Esi)).unwrap();
        assert_eq!(out.dataset.records.len(), 1);
        assert_eq!(out.rejections.len(), 1);
        assert_eq!(out.rejections[0].row, 1);
        assert!(matches!(out.rejections[0].reason, RejectReason::InvalidAcuity { .. }));
    }

    #[test]
    fn empty_cell_is_missing_not_zero() {
        let out = load_str("id,chief_complaint,heart_rate,spo2\na,cough,,0\n", &LoadOptions::new(Protocol::Esi)).unwrap();
        let r = &out.dataset.records[0];
        assert_eq!(r.vitals.heart_rate, None);
        assert_eq!(r.vitals.spo2, Some(0.0));
    }

    #[test]
    fn out_of_range_vital_rejected() {
        let out = load_str("id,chief_complaint,temperature\na,cough,99\n", &LoadOptions::new(Protocol::Esi)).unwrap();
        assert!(matches!(out.rejections[0].reason, RejectReason::OutOfRangeVital { .. }));
    }

    #[test]
    fn missing_required_column() {
        let err = load_str("id,complaint\na,cough\n", &LoadOptions::new(Protocol::Esi)).unwrap_err();
        assert!(matches!(err, DatasetError::MissingRequiredColumn(c) if c == "chief_complaint"));
    }

    #[test]
    fn schema_map_and_extras() {
        let mut opts = LoadOptions::new(Protocol::Ktas);
        opts.schema_map.insert("id".into(), "patient".into());
        opts.schema_map.insert("chief_complaint".into(), "Chief_complain".into());
        opts.schema_map.insert("heart_rate".into(), "HR".into());
        opts.schema_map.insert("x_arrival_mode".into(), "Arrival mode".into());
        let out = load_str(
            "patient,Chief_complain,HR,Arrival mode,x_injury\np1,abdominal pain,88,walk-in,no\n",
            &opts,
        )
        .unwrap();
        let r = &out.dataset.records[0];
        assert_eq!(r.id, "p1");
        assert_eq!(r.vitals.heart_rate, Some(88.0));
        assert_eq!(out.dataset.extra_columns, vec!["x_arrival_mode", "x_injury"]);
        assert_eq!(r.extras.get("x_arrival_mode").unwrap(), "walk-in");
    }

    #[test]
    fn duplicate_ids_rejected_after_first() {
        let out = load_str("id,chief_complaint\na,cough\na,fever\n", &LoadOptions::new(Protocol::Esi)).unwrap();
        assert_eq!(out.dataset.records.len(), 1);
        assert!(matches!(out.rejections[0].reason, RejectReason::DuplicateId { .. }));
    }

    #[test]
    fn semicolon_delimiter_and_quoted_text() {
        let mut opts = LoadOptions::new(Protocol::Esi);
        opts.delimiter = ';';
        let out = load_str("id;chief_complaint\na;\"pain; left arm\"\n", &opts).unwrap();
        assert_eq!(out.dataset.records[0].chief_complaint, "pain; left arm");
    }

    #[test]
    fn jsonl_input() {
        let mut f = tempfile::Builder::new().suffix(".jsonl").tempfile().unwrap();
        writeln!(f, r#"{{"id":"a","chief_complaint":"fever","temperature":38.5,"acuity":3}}"#).unwrap();
        writeln!(f, r#"{{"id":"b","chief_complaint":"cough","temperature":null}}"#).unwrap();
        let out = load_dataset(f.path(), &LoadOptions::new(Protocol::Esi)).unwrap();
        assert_eq!(out.dataset.records.len(), 2);
        assert_eq!(out.dataset.records[0].vitals.temperature, Some(38.5));
        assert_eq!(out.dataset.records[1].vitals.temperature, None);
    }

    #[test]
    fn unreadable_file() {
        let err = load_dataset(Path::new("/definitely/not/here.csv"), &LoadOptions::new(Protocol::Esi)).unwrap_err();
        assert!(matches!(err, DatasetError::FileUnreadable { .. }));
    }
}
