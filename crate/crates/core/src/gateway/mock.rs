//! Deterministic mock models for tests and offline runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, ChatRequest, Subject, TransportError};
use crate::dataset::{AcuityLevel, Demographics, Race, Sex, TriageRecord};
use crate::seeds::keyed_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockKind {
    RuleBased,
    Biased,
}

impl MockKind {
    pub fn name(self) -> &'static str {
        match self {
            MockKind::RuleBased => "rule-based",
            MockKind::Biased => "biased",
        }
    }
}

/// Acuity offset applied to one (sex, race) cell by a biased mock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasOffset {
    pub sex: Sex,
    pub race: Race,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSpec {
    pub kind: MockKind,
    pub bias_offsets: Vec<BiasOffset>,
    /// Probability in [0, 1] that a record's prediction receives its cell offset.
    pub bias_application_rate: f64,
    /// Seed for the per-record application draw.
    pub seed: u64,
}

impl Default for MockSpec {
    fn default() -> Self {
        Self { kind: MockKind::RuleBased, bias_offsets: Vec::new(), bias_application_rate: 1.0, seed: 0 }
    }
}

impl MockSpec {
    pub fn rule_based() -> Self {
        Self::default()
    }

    pub fn biased(offsets: Vec<BiasOffset>, rate: f64) -> Self {
        Self { kind: MockKind::Biased, bias_offsets: offsets, bias_application_rate: rate, seed: 0 }
    }

    pub fn offset_for(&self, demographics: &Demographics) -> f64 {
        match (demographics.sex, demographics.race) {
            (Some(sex), Some(race)) => self
                .bias_offsets
                .iter()
                .filter(|b| b.sex == sex && b.race == race)
                .map(|b| b.offset)
                .sum(),
            _ => 0.0,
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.bias_application_rate) {
            out.push(format!("mock.bias_application_rate must be in [0, 1] (got {})", self.bias_application_rate));
        }
        if self.bias_offsets.iter().any(|b| !b.offset.is_finite()) {
            out.push("mock.bias_offsets must be finite".into());
        }
        out
    }
}

/// Vitals-threshold triage rule shared by the rule-based mock and the
/// synthetic-data generator. Starts at 5 and only ever lowers the level;
/// absent vitals skip their rule.
///
/// - pain ≥ 4 or temperature ≥ 38.0 → at most 4
/// - pain ≥ 7 or HR > 100 or RR > 24 → at most 3
/// - SpO2 < 92 or SBP < 90 → at most 2
/// - SpO2 < 85 or HR > 140 → 1
pub fn rule_based_acuity(record: &TriageRecord) -> AcuityLevel {
    level_from(&findings(record))
}

#[derive(Debug, Clone, Copy)]
struct Finding {
    cap: u8,
    text: &'static str,
}

fn findings(record: &TriageRecord) -> Vec<Finding> {
    let v = &record.vitals;
    let above = |x: Option<f64>, t: f64| x.is_some_and(|x| x > t);
    let below = |x: Option<f64>, t: f64| x.is_some_and(|x| x < t);
    let pain_at_least = |t: u8| record.pain.is_some_and(|p| p >= t);
    let mut out = Vec::new();
    let mut push = |cond: bool, cap: u8, text: &'static str| {
        if cond {
            out.push(Finding { cap, text });
        }
    };
    push(below(v.spo2, 85.0), 1, "oxygen saturation below 85%");
    push(above(v.heart_rate, 140.0), 1, "heart rate above 140");
    push(below(v.spo2, 92.0), 2, "oxygen saturation below 92%");
    push(below(v.systolic_bp, 90.0), 2, "systolic pressure below 90");
    push(pain_at_least(7), 3, "severe pain (7 or more)");
    push(above(v.heart_rate, 100.0), 3, "heart rate above 100");
    push(above(v.respiratory_rate, 24.0), 3, "respiratory rate above 24");
    push(pain_at_least(4), 4, "moderate pain (4 or more)");
    push(v.temperature.is_some_and(|t| t >= 38.0), 4, "fever of 38.0 °C or more");
    out
}

fn level_from(findings: &[Finding]) -> AcuityLevel {
    let level = findings.iter().map(|f| f.cap).min().unwrap_or(5);
    AcuityLevel::new(level).expect("rule caps are 1..=5")
}

/// Prediction of a mock model for `record` presented with `demographics`.
///
/// The biased mock adds its cell offset when a per-record uniform draw
/// (seeded by `seed` and the record id, shared by all variants of that
/// record) falls below the application rate; the result is rounded half
/// away from zero and clamped to 1..=5.
pub fn mock_predict(spec: &MockSpec, record: &TriageRecord, demographics: &Demographics, seed: u64) -> AcuityLevel {
    let base = rule_based_acuity(record);
    match spec.kind {
        MockKind::RuleBased => base,
        MockKind::Biased => {
            let mut rng = ChaCha8Rng::seed_from_u64(keyed_seed(seed, &record.id));
            let draw: f64 = rng.gen();
            if draw < spec.bias_application_rate {
                AcuityLevel::clamped(base.get() as f64 + spec.offset_for(demographics))
            } else {
                base
            }
        }
    }
}

/// Response text of a mock: the fired findings then `Acuity: N`.
pub fn mock_response(spec: &MockSpec, record: &TriageRecord, demographics: &Demographics, seed: u64) -> String {
    let level = mock_predict(spec, record, demographics, seed);
    let fired = findings(record);
    let reasoning = if fired.is_empty() {
        "No high-risk findings in the available vital signs.".to_string()
    } else {
        let list: Vec<&str> = fired.iter().map(|f| f.text).collect();
        format!("Findings: {}.", list.join("; "))
    };
    format!("{reasoning}\nAcuity: {level}")
}

pub const MOCK_EMBEDDING_DIM: usize = 64;

/// Feature-hashed bag-of-words embedding (unigrams and bigrams), unit norm.
/// Text without tokens maps to the first basis vector.
pub fn mock_embedding(text: &str, dim: usize) -> Vec<f64> {
    let tokens: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect();
    let mut v = vec![0.0; dim];
    let mut add = |feature: &str, weight: f64| {
        let digest = Sha256::digest(feature.as_bytes());
        let idx = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) as usize % dim;
        let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
        v[idx] += sign * weight;
    };
    for t in &tokens {
        add(t, 1.0);
    }
    for pair in tokens.windows(2) {
        add(&format!("{} {}", pair[0], pair[1]), 0.5);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// In-process backend answering from the subject record.
#[derive(Debug, Clone)]
pub struct MockBackend {
    spec: MockSpec,
}

impl MockBackend {
    pub fn new(spec: MockSpec) -> Self {
        Self { spec }
    }
}

impl Backend for MockBackend {
    fn chat(&self, _request: &ChatRequest, subject: Option<&Subject>) -> Result<String, TransportError> {
        let subject = subject.ok_or_else(|| TransportError::Status {
            code: 400,
            body: "mock endpoints need the subject record".into(),
        })?;
        Ok(mock_response(&self.spec, &subject.record, &subject.demographics, self.spec.seed))
    }

    fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, TransportError> {
        Ok(texts.iter().map(|t| mock_embedding(t, MOCK_EMBEDDING_DIM)).collect())
    }

    fn subject_sensitive(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::VitalSigns;

    fn normal() -> TriageRecord {
        let mut r = TriageRecord::new("n", "cold symptoms");
        r.vitals = VitalSigns {
            temperature: Some(36.8),
            heart_rate: Some(72.0),
            respiratory_rate: Some(14.0),
            systolic_bp: Some(120.0),
            diastolic_bp: Some(80.0),
            spo2: Some(98.0),
        };
        r.pain = Some(2);
        r
    }

    #[test]
    fn normal_vitals_score_five() {
        assert_eq!(rule_based_acuity(&normal()).get(), 5);
    }

    #[test]
    fn low_spo2_scores_one() {
        let mut r = normal();
        r.vitals.spo2 = Some(84.0);
        assert_eq!(rule_based_acuity(&r).get(), 1);
    }

    #[test]
    fn rule_thresholds() {
        let mut r = normal();
        r.pain = Some(7);
        assert_eq!(rule_based_acuity(&r).get(), 3);
        r.vitals.systolic_bp = Some(85.0);
        assert_eq!(rule_based_acuity(&r).get(), 2);
        r.vitals.heart_rate = Some(141.0);
        assert_eq!(rule_based_acuity(&r).get(), 1);
        let mut r = normal();
        r.pain = Some(4);
        assert_eq!(rule_based_acuity(&r).get(), 4);
    }

    #[test]
    fn missing_vitals_skip_rules() {
        let r = TriageRecord::new("m", "cough");
        assert_eq!(rule_based_acuity(&r).get(), 5);
    }

    #[test]
    fn biased_offset_arithmetic() {
        let mut r = normal();
        r.vitals.heart_rate = Some(110.0); // scores 3
        let spec = MockSpec::biased(vec![BiasOffset { sex: Sex::Female, race: Race::Asian, offset: 1.0 }], 1.0);
        let target = Demographics::new(Sex::Female, Race::Asian);
        assert_eq!(mock_predict(&spec, &r, &target, 5).get(), 4);
        assert_eq!(mock_predict(&spec, &r, &Demographics::new(Sex::Male, Race::Asian), 5).get(), 3);
        let never = MockSpec { bias_application_rate: 0.0, ..spec.clone() };
        assert_eq!(mock_predict(&never, &r, &target, 5).get(), 3);
        let big = MockSpec::biased(vec![BiasOffset { sex: Sex::Female, race: Race::Asian, offset: 9.0 }], 1.0);
        assert_eq!(mock_predict(&big, &r, &target, 5).get(), 5);
    }

    #[test]
    fn response_ends_with_answer() {
        let text = mock_response(&MockSpec::rule_based(), &normal(), &Demographics::default(), 0);
        assert!(text.ends_with("Acuity: 5"));
    }

    #[test]
    fn embeddings_are_deterministic_unit_vectors() {
        let a = mock_embedding("chest pain for 2 days", 64);
        assert_eq!(a, mock_embedding("chest pain for 2 days", 64));
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(mock_embedding("", 8)[0], 1.0);
    }
}
