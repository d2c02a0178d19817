use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// Ordinal triage acuity, 1 (most urgent) to 5 (least urgent).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct AcuityLevel(u8);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("acuity level must be an integer in 1..=5, got {0}")]
pub struct InvalidAcuity(pub String);

impl AcuityLevel {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 5;
    /// Number of ordinal levels.
    pub const COUNT: usize = 5;

    pub fn new(level: u8) -> Result<Self, InvalidAcuity> {
        if (Self::MIN..=Self::MAX).contains(&level) {
            Ok(Self(level))
        } else {
            Err(InvalidAcuity(level.to_string()))
        }
    }

    /// Builds a level from a real value by rounding half away from zero and
    /// clamping into 1..=5.
    pub fn clamped(value: f64) -> Self {
        let rounded = value.round();
        let clamped = rounded.clamp(Self::MIN as f64, Self::MAX as f64);
        Self(clamped as u8)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based index (level 1 → 0).
    pub fn index(self) -> usize {
        (self.0 - 1) as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        u8::try_from(index + 1).ok().and_then(|l| Self::new(l).ok())
    }

    pub fn all() -> impl Iterator<Item = AcuityLevel> {
        (Self::MIN..=Self::MAX).map(AcuityLevel)
    }
}

impl TryFrom<u8> for AcuityLevel {
    type Error = InvalidAcuity;
    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<AcuityLevel> for u8 {
    fn from(value: AcuityLevel) -> Self {
        value.0
    }
}

impl FromStr for AcuityLevel {
    type Err = InvalidAcuity;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        // accept "2" and "2.0" but nothing fractional
        let parsed = t
            .parse::<u8>()
            .ok()
            .or_else(|| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.fract() == 0.0 && *v >= 0.0 && *v <= 255.0)
                    .map(|v| v as u8)
            })
            .ok_or_else(|| InvalidAcuity(t.to_string()))?;
        Self::new(parsed).map_err(|_| InvalidAcuity(t.to_string()))
    }
}

impl fmt::Display for AcuityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub const ALL: [Sex; 2] = [Sex::Male, Sex::Female];

    pub fn label(self) -> &'static str {
        match self {
            Sex::Male => "Male",
            Sex::Female => "Female",
        }
    }

    pub fn name(self) -> &'static str {
        self.label()
    }
}

/// The six race categories used for counterfactual auditing, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Race {
    White,
    Black,
    Asian,
    Hispanic,
    AmericanIndian,
    NativeHawaiianPacificIslander,
}

impl Race {
    pub const ALL: [Race; 6] = [
        Race::White,
        Race::Black,
        Race::Asian,
        Race::Hispanic,
        Race::AmericanIndian,
        Race::NativeHawaiianPacificIslander,
    ];

    /// Human-readable label used in prompts and tables.
    pub fn label(self) -> &'static str {
        match self {
            Race::White => "White",
            Race::Black => "Black",
            Race::Asian => "Asian",
            Race::Hispanic => "Hispanic",
            Race::AmericanIndian => "American Indian",
            Race::NativeHawaiianPacificIslander => "Native Hawaiian/Pacific Islander",
        }
    }

    /// Canonical identifier written to dataset files.
    pub fn name(self) -> &'static str {
        match self {
            Race::White => "White",
            Race::Black => "Black",
            Race::Asian => "Asian",
            Race::Hispanic => "Hispanic",
            Race::AmericanIndian => "AmericanIndian",
            Race::NativeHawaiianPacificIslander => "NativeHawaiianPacificIslander",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unrecognised {field} value {value:?}")]
pub struct InvalidDemographic {
    pub field: &'static str,
    pub value: String,
}

fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

impl FromStr for Sex {
    type Err = InvalidDemographic;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match squash(s).as_str() {
            "m" | "male" | "man" | "men" => Ok(Sex::Male),
            "f" | "female" | "woman" | "women" => Ok(Sex::Female),
            _ => Err(InvalidDemographic { field: "sex", value: s.to_string() }),
        }
    }
}

impl FromStr for Race {
    type Err = InvalidDemographic;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match squash(s).as_str() {
            "white" => Ok(Race::White),
            "black" | "blackafricanamerican" | "africanamerican" => Ok(Race::Black),
            "asian" => Ok(Race::Asian),
            "hispanic" | "hispaniclatino" | "latino" => Ok(Race::Hispanic),
            "americanindian" | "americanindianalaskanative" => Ok(Race::AmericanIndian),
            "nativehawaiian"
            | "nativehawaiianpacificislander"
            | "nativehawaiianorotherpacificislander"
            | "nativehawaiianasianpacificislander"
            | "pacificislander" => Ok(Race::NativeHawaiianPacificIslander),
            _ => Err(InvalidDemographic { field: "race", value: s.to_string() }),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Demographics {
    pub sex: Option<Sex>,
    pub race: Option<Race>,
}

impl Demographics {
    pub fn new(sex: Sex, race: Race) -> Self {
        Self { sex: Some(sex), race: Some(race) }
    }
}

/// The six vital signs, in dataset-schema order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VitalKind {
    Temperature,
    HeartRate,
    RespiratoryRate,
    SystolicBp,
    DiastolicBp,
    Spo2,
}

impl VitalKind {
    pub const ALL: [VitalKind; 6] = [
        VitalKind::Temperature,
        VitalKind::HeartRate,
        VitalKind::RespiratoryRate,
        VitalKind::SystolicBp,
        VitalKind::DiastolicBp,
        VitalKind::Spo2,
    ];

    /// Canonical column name.
    pub fn column(self) -> &'static str {
        match self {
            VitalKind::Temperature => "temperature",
            VitalKind::HeartRate => "heart_rate",
            VitalKind::RespiratoryRate => "respiratory_rate",
            VitalKind::SystolicBp => "systolic_bp",
            VitalKind::DiastolicBp => "diastolic_bp",
            VitalKind::Spo2 => "spo2",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VitalSigns {
    /// °C
    pub temperature: Option<f64>,
    /// beats/min
    pub heart_rate: Option<f64>,
    /// breaths/min
    pub respiratory_rate: Option<f64>,
    /// mmHg
    pub systolic_bp: Option<f64>,
    /// mmHg
    pub diastolic_bp: Option<f64>,
    /// percent
    pub spo2: Option<f64>,
}

impl VitalSigns {
    pub fn get(&self, kind: VitalKind) -> Option<f64> {
        match kind {
            VitalKind::Temperature => self.temperature,
            VitalKind::HeartRate => self.heart_rate,
            VitalKind::RespiratoryRate => self.respiratory_rate,
            VitalKind::SystolicBp => self.systolic_bp,
            VitalKind::DiastolicBp => self.diastolic_bp,
            VitalKind::Spo2 => self.spo2,
        }
    }

    pub fn set(&mut self, kind: VitalKind, value: Option<f64>) {
        let slot = match kind {
            VitalKind::Temperature => &mut self.temperature,
            VitalKind::HeartRate => &mut self.heart_rate,
            VitalKind::RespiratoryRate => &mut self.respiratory_rate,
            VitalKind::SystolicBp => &mut self.systolic_bp,
            VitalKind::DiastolicBp => &mut self.diastolic_bp,
            VitalKind::Spo2 => &mut self.spo2,
        };
        *slot = value;
    }
}

/// Inclusive plausibility window for one vital sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub min: f64,
    pub max: f64,
}

impl Window {
    pub fn contains(&self, v: f64) -> bool {
        v.is_finite() && v >= self.min && v <= self.max
    }
}

/// Per-vital plausibility windows applied at ingest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlausibilityWindows {
    pub temperature: Window,
    pub heart_rate: Window,
    pub respiratory_rate: Window,
    pub systolic_bp: Window,
    pub diastolic_bp: Window,
    pub spo2: Window,
}

impl Default for PlausibilityWindows {
    fn default() -> Self {
        Self {
            temperature: Window { min: 25.0, max: 45.0 },
            heart_rate: Window { min: 0.0, max: 300.0 },
            respiratory_rate: Window { min: 0.0, max: 80.0 },
            systolic_bp: Window { min: 0.0, max: 300.0 },
            diastolic_bp: Window { min: 0.0, max: 200.0 },
            spo2: Window { min: 0.0, max: 100.0 },
        }
    }
}

impl PlausibilityWindows {
    pub fn window(&self, kind: VitalKind) -> Window {
        match kind {
            VitalKind::Temperature => self.temperature,
            VitalKind::HeartRate => self.heart_rate,
            VitalKind::RespiratoryRate => self.respiratory_rate,
            VitalKind::SystolicBp => self.systolic_bp,
            VitalKind::DiastolicBp => self.diastolic_bp,
            VitalKind::Spo2 => self.spo2,
        }
    }
}

/// One patient presentation at triage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageRecord {
    pub id: String,
    pub cohort_year: Option<i32>,
    pub vitals: VitalSigns,
    /// Self-reported pain, 0–10.
    pub pain: Option<u8>,
    pub chief_complaint: String,
    /// Protocol-specific structured features keyed by their `x_` column name.
    #[serde(default)]
    pub extras: IndexMap<String, String>,
    pub label: Option<AcuityLevel>,
    #[serde(default)]
    pub demographics: Demographics,
}

/// Number of slots counted by [`TriageRecord::missingness_fraction`]: six vitals plus pain.
pub const MISSINGNESS_SLOTS: usize = 7;

impl TriageRecord {
    /// A record with only an id and chief complaint; everything else absent.
    pub fn new(id: impl Into<String>, chief_complaint: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            cohort_year: None,
            vitals: VitalSigns::default(),
            pain: None,
            chief_complaint: chief_complaint.into(),
            extras: IndexMap::new(),
            label: None,
            demographics: Demographics::default(),
        }
    }

    /// Count of absent vitals, optionally including pain.
    pub fn missing_count(&self, count_pain: bool) -> usize {
        let vitals = VitalKind::ALL.iter().filter(|k| self.vitals.get(**k).is_none()).count();
        vitals + usize::from(count_pain && self.pain.is_none())
    }

    /// Fraction of the six vitals plus pain that are absent.
    pub fn missingness_fraction(&self) -> f64 {
        self.missing_count(true) as f64 / MISSINGNESS_SLOTS as f64
    }
}

/// Fraction of the seven missingness slots (six vitals and pain) that are absent.
pub fn missingness_fraction(record: &TriageRecord) -> f64 {
    record.missingness_fraction()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "ESI", alias = "esi")]
    Esi,
    #[serde(rename = "KTAS", alias = "ktas")]
    Ktas,
}

impl Protocol {
    pub fn short_name(self) -> &'static str {
        match self {
            Protocol::Esi => "ESI",
            Protocol::Ktas => "KTAS",
        }
    }

    pub fn long_name(self) -> &'static str {
        match self {
            Protocol::Esi => "Emergency Severity Index",
            Protocol::Ktas => "Korean Triage and Acuity Scale",
        }
    }
}

impl FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ESI" => Ok(Protocol::Esi),
            "KTAS" => Ok(Protocol::Ktas),
            other => Err(format!("unknown protocol {other:?} (expected ESI or KTAS)")),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn acuity_bounds() {
        assert!(AcuityLevel::new(0).is_err());
        assert!(AcuityLevel::new(6).is_err());
        assert_eq!(AcuityLevel::new(3).unwrap().get(), 3);
        assert!("7".parse::<AcuityLevel>().is_err());
        assert_eq!("2.0".parse::<AcuityLevel>().unwrap().get(), 2);
        assert!("2.5".parse::<AcuityLevel>().is_err());
    }

    #[test]
    fn acuity_clamped_rounds_half_away_from_zero() {
        assert_eq!(AcuityLevel::clamped(3.5).get(), 4);
        assert_eq!(AcuityLevel::clamped(2.49).get(), 2);
        assert_eq!(AcuityLevel::clamped(7.0).get(), 5);
        assert_eq!(AcuityLevel::clamped(-1.5).get(), 1);
    }

    #[test]
    fn missingness_examples() {
        let mut r = TriageRecord::new("a", "cough");
        assert_eq!(r.missingness_fraction(), 1.0);
        r.vitals = VitalSigns {
            temperature: Some(37.0),
            heart_rate: Some(80.0),
            respiratory_rate: Some(16.0),
            systolic_bp: Some(120.0),
            diastolic_bp: Some(80.0),
            spo2: Some(98.0),
        };
        r.pain = Some(3);
        assert_eq!(r.missingness_fraction(), 0.0);
        r.pain = None;
        r.vitals.spo2 = None;
        assert!((r.missingness_fraction() - 2.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn race_parsing_is_lenient() {
        assert_eq!("Native Hawaiian/Pacific Islander".parse::<Race>().unwrap(), Race::NativeHawaiianPacificIslander);
        assert_eq!("american indian".parse::<Race>().unwrap(), Race::AmericanIndian);
        assert_eq!("F".parse::<Sex>().unwrap(), Sex::Female);
        assert!("martian".parse::<Race>().is_err());
    }
}
