//! Rendering a triage record as prompt text.
//!
//! Four styles are supported. `Natural` writes an English paragraph and
//! skips absent fields. The three list styles (`Commas`, `Spaces`,
//! `Newlines`) write the feature names, a separator line, then the values in
//! the same order, with absent values shown as the missing token.
//!
//! When demographics are enabled the demographic sentence is the first line
//! of the output, followed by a line break and the clinical body.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Demographics, Protocol, Race, Sex, TriageRecord, VitalKind, KTAS_EXTRA_COLUMNS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SerializationStyle {
    Natural,
    Commas,
    Newlines,
    Spaces,
}

impl SerializationStyle {
    pub const ALL: [SerializationStyle; 4] = [
        SerializationStyle::Natural,
        SerializationStyle::Commas,
        SerializationStyle::Newlines,
        SerializationStyle::Spaces,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SerializationStyle::Natural => "natural",
            SerializationStyle::Commas => "commas",
            SerializationStyle::Newlines => "newlines",
            SerializationStyle::Spaces => "spaces",
        }
    }

    fn delimiter(self) -> Option<&'static str> {
        match self {
            SerializationStyle::Natural => None,
            SerializationStyle::Commas => Some(", "),
            SerializationStyle::Newlines => Some("\n"),
            SerializationStyle::Spaces => Some(" "),
        }
    }
}

impl FromStr for SerializationStyle {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown serialization style {s:?} (expected natural, commas, newlines or spaces)"))
    }
}

impl fmt::Display for SerializationStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const DEFAULT_DEMOGRAPHIC_TEMPLATE: &str = "The patient is a {race} {sex}.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SerializationOptions {
    pub style: SerializationStyle,
    pub include_demographics: bool,
    /// Must contain `{race}` and `{sex}` when demographics are included.
    pub demographic_template: String,
    pub missing_token: String,
    /// Extra (`x_`) fields to render, in order. Empty means "the record's own extras".
    pub extra_fields: Vec<String>,
}

impl Default for SerializationOptions {
    fn default() -> Self {
        Self {
            style: SerializationStyle::Natural,
            include_demographics: false,
            demographic_template: DEFAULT_DEMOGRAPHIC_TEMPLATE.to_string(),
            missing_token: "NA".to_string(),
            extra_fields: Vec::new(),
        }
    }
}

impl SerializationOptions {
    pub fn with_style(style: SerializationStyle) -> Self {
        Self { style, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SerializeError> {
        if self.include_demographics {
            for placeholder in ["{race}", "{sex}"] {
                if !self.demographic_template.contains(placeholder) {
                    return Err(SerializeError::TemplateMissingPlaceholder(placeholder));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SerializeError {
    #[error("demographic template is missing the {0} placeholder")]
    TemplateMissingPlaceholder(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Field {
    ChiefComplaint,
    Vital(VitalKind),
    Pain,
    Extra(String),
}

impl Field {
    pub fn name(&self) -> &str {
        match self {
            Field::ChiefComplaint => "chief_complaint",
            Field::Vital(kind) => kind.column(),
            Field::Pain => "pain",
            Field::Extra(name) => name,
        }
    }
}

fn core_fields() -> Vec<Field> {
    let mut fields = vec![Field::ChiefComplaint];
    fields.extend(VitalKind::ALL.into_iter().map(Field::Vital));
    fields.push(Field::Pain);
    fields
}

/// Canonical field order: chief complaint, the six vitals in schema order,
/// pain, then (KTAS only) the protocol extras.
pub fn field_order(protocol: Protocol) -> Vec<Field> {
    let mut fields = core_fields();
    if protocol == Protocol::Ktas {
        fields.extend(KTAS_EXTRA_COLUMNS.iter().map(|s| Field::Extra(s.to_string())));
    }
    fields
}

fn record_fields(record: &TriageRecord, opts: &SerializationOptions) -> Vec<Field> {
    let mut fields = core_fields();
    if opts.extra_fields.is_empty() {
        fields.extend(record.extras.keys().map(|k| Field::Extra(k.clone())));
    } else {
        fields.extend(opts.extra_fields.iter().map(|k| Field::Extra(k.clone())));
    }
    fields
}

/// Shortest round-trip form, with integers printed without a fraction.
fn fmt_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

/// Temperatures keep at least one decimal place.
fn fmt_temperature(v: f64) -> String {
    if (v * 10.0).fract() == 0.0 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

fn field_value(record: &TriageRecord, field: &Field) -> Option<String> {
    match field {
        Field::ChiefComplaint => Some(record.chief_complaint.clone()),
        Field::Vital(VitalKind::Temperature) => record.vitals.temperature.map(fmt_temperature),
        Field::Vital(kind) => record.vitals.get(*kind).map(fmt_number),
        Field::Pain => record.pain.map(|p| p.to_string()),
        Field::Extra(name) => record.extras.get(name).cloned(),
    }
}

fn humanize(name: &str) -> String {
    let bare = name.strip_prefix("x_").unwrap_or(name).replace('_', " ");
    let mut chars = bare.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => bare,
    }
}

fn natural_sentence(field: &Field, value: &str) -> String {
    match field {
        Field::ChiefComplaint => format!("Chief complaint: {value}."),
        Field::Vital(VitalKind::Temperature) => format!("Temperature is {value} °C."),
        Field::Vital(VitalKind::HeartRate) => format!("Heart rate is {value} bpm."),
        Field::Vital(VitalKind::RespiratoryRate) => format!("Respiratory rate is {value} breaths/min."),
        Field::Vital(VitalKind::SystolicBp) => format!("Systolic blood pressure is {value} mmHg."),
        Field::Vital(VitalKind::DiastolicBp) => format!("Diastolic blood pressure is {value} mmHg."),
        Field::Vital(VitalKind::Spo2) => format!("Oxygen saturation is {value}%."),
        Field::Pain => format!("Pain level is {value}/10."),
        Field::Extra(name) => format!("{}: {value}.", humanize(name)),
    }
}

/// The clinical part of the serialization, without any demographic sentence.
pub fn serialize_body(record: &TriageRecord, opts: &SerializationOptions) -> String {
    let fields = record_fields(record, opts);
    match opts.style.delimiter() {
        None => fields
            .iter()
            .filter_map(|f| field_value(record, f).map(|v| natural_sentence(f, &v)))
            .collect::<Vec<_>>()
            .join(" "),
        Some(delim) => {
            let names: Vec<&str> = fields.iter().map(Field::name).collect();
            let values: Vec<String> = fields
                .iter()
                .map(|f| field_value(record, f).unwrap_or_else(|| opts.missing_token.clone()))
                .collect();
            // the newline style needs a blank line to mark the separator
            let separator = if opts.style == SerializationStyle::Newlines { "\n\n" } else { "\n" };
            format!("{}{separator}{}", names.join(delim), values.join(delim))
        }
    }
}

/// Fills the demographic template, or `None` when either attribute is unknown.
pub fn demographic_sentence(demographics: &Demographics, template: &str) -> Option<String> {
    let sex = demographics.sex?;
    let race = demographics.race?;
    Some(template.replace("{race}", race.label()).replace("{sex}", sex.label()))
}

/// Serializes `record` under `opts`.
pub fn serialize_record(record: &TriageRecord, opts: &SerializationOptions) -> Result<String, SerializeError> {
    opts.validate()?;
    let body = serialize_body(record, opts);
    if opts.include_demographics {
        if let Some(sentence) = demographic_sentence(&record.demographics, &opts.demographic_template) {
            return Ok(format!("{sentence}\n{body}"));
        }
    }
    Ok(body)
}

/// Removes a leading demographic sentence produced by [`serialize_record`].
/// Text whose first line is not a rendering of the template is returned as is.
pub fn strip_demographic_sentence<'a>(text: &'a str, opts: &SerializationOptions) -> &'a str {
    if !opts.include_demographics {
        return text;
    }
    let Some((first, rest)) = text.split_once('\n') else {
        return text;
    };
    let matches = Sex::ALL.iter().any(|&sex| {
        Race::ALL.iter().any(|&race| {
            demographic_sentence(&Demographics::new(sex, race), &opts.demographic_template).as_deref()
                == Some(first)
        })
    });
    if matches {
        rest
    } else {
        text
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Race, Sex};

    fn headache() -> TriageRecord {
        let mut r = TriageRecord::new("h1", "headache");
        r.vitals.heart_rate = Some(80.0);
        r
    }

    #[test]
    fn commas_style() {
        let s = serialize_record(&headache(), &SerializationOptions::with_style(SerializationStyle::Commas)).unwrap();
        assert_eq!(
            s,
            "chief_complaint, temperature, heart_rate, respiratory_rate, systolic_bp, diastolic_bp, spo2, pain\n\
             headache, NA, 80, NA, NA, NA, NA, NA"
        );
    }

    #[test]
    fn natural_style_omits_missing() {
        let s = serialize_record(&headache(), &SerializationOptions::default()).unwrap();
        assert_eq!(s, "Chief complaint: headache. Heart rate is 80 bpm.");
        assert!(!s.contains("NA"));
    }

    #[test]
    fn demographic_sentence_prepended() {
        let mut r = headache();
        r.demographics = Demographics::new(Sex::Female, Race::Black);
        let opts = SerializationOptions { include_demographics: true, ..Default::default() };
        let s = serialize_record(&r, &opts).unwrap();
        assert!(s.starts_with("The patient is a Black Female."));
        assert_eq!(strip_demographic_sentence(&s, &opts), serialize_body(&r, &opts));
    }

    #[test]
    fn strip_leaves_text_without_sentence() {
        let opts = SerializationOptions {
            include_demographics: true,
            ..SerializationOptions::with_style(SerializationStyle::Newlines)
        };
        let s = serialize_record(&headache(), &opts).unwrap();
        assert_eq!(strip_demographic_sentence(&s, &opts), s);
    }

    #[test]
    fn template_placeholder_checked() {
        let opts = SerializationOptions {
            include_demographics: true,
            demographic_template: "Race: {race}.".into(),
            ..Default::default()
        };
        assert_eq!(
            serialize_record(&headache(), &opts),
            Err(SerializeError::TemplateMissingPlaceholder("{sex}"))
        );
    }

    #[test]
    fn field_order_is_canonical() {
        let esi = field_order(Protocol::Esi);
        assert_eq!(esi[0], Field::ChiefComplaint);
        assert_eq!(esi.len(), 8);
        let ktas = field_order(Protocol::Ktas);
        assert_eq!(&ktas[..8], &esi[..]);
        assert!(ktas[8..].iter().all(|f| f.name().starts_with("x_")));
        assert_eq!(field_order(Protocol::Ktas), ktas);
    }

    #[test]
    fn temperature_keeps_a_decimal() {
        assert_eq!(fmt_temperature(37.0), "37.0");
        assert_eq!(fmt_temperature(37.25), "37.25");
        assert_eq!(fmt_number(98.0), "98");
        assert_eq!(fmt_number(98.5), "98.5");
    }

    #[test]
    fn style_names_parse() {
        for st in SerializationStyle::ALL {
            assert_eq!(st.name().parse::<SerializationStyle>().unwrap(), st);
        }
        assert!("tsv".parse::<SerializationStyle>().is_err());
    }
}
