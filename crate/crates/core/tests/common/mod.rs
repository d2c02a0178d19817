#![allow(dead_code)]

use std::path::{Path, PathBuf};

use edtriage::serialize::{serialize_record, SerializationOptions, SerializationStyle};
use edtriage::TriageRecord;
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    name: String,
    record: TriageRecord,
    options: SerializationOptions,
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Compares every (case, style) rendering against `golden/<case>.<style>.txt`.
/// Returns the mismatching file names. With `EDTRIAGE_BLESS=1` the files are
/// rewritten instead.
pub fn check_golden() -> (usize, Vec<String>) {
    let dir = golden_dir();
    let cases: Vec<Case> = serde_json::from_str(&std::fs::read_to_string(dir.join("cases.json")).unwrap()).unwrap();
    let bless = std::env::var_os("EDTRIAGE_BLESS").is_some();
    let mut checked = 0;
    let mut bad = Vec::new();
    for case in &cases {
        for style in SerializationStyle::ALL {
            let opts = SerializationOptions { style, ..case.options.clone() };
            let text = serialize_record(&case.record, &opts).unwrap();
            let file = format!("{}.{}.txt", case.name, style.name());
            let path = dir.join(&file);
            if bless {
                std::fs::write(&path, &text).unwrap();
            }
            checked += 1;
            match std::fs::read(&path) {
                Ok(expected) if expected == text.as_bytes() => {}
                _ => bad.push(file),
            }
        }
    }
    (checked, bad)
}
