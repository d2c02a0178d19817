//! Deterministic synthetic triage records.
//!
//! Stand-in for credentialed hospital data. Labels come from the same
//! vitals-threshold rule the rule-based mock model answers with, so a
//! rule-based mock scores perfectly on generated data.

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Demographics, Protocol, Race, Sex, TriageRecord, VitalKind, VitalSigns};
use crate::gateway::rule_based_acuity;

/// Extra columns emitted for KTAS datasets, in schema order.
pub const KTAS_EXTRA_COLUMNS: [&str; 3] = ["x_arrival_mode", "x_injury", "x_mental_state"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticOptions {
    pub n: usize,
    pub seed: u64,
    pub protocol: Protocol,
    /// Probability that each of the seven vitals/pain slots is blanked.
    pub missing_rate: f64,
    pub first_year: i32,
    pub last_year: i32,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self { n: 1000, seed: 0, protocol: Protocol::Esi, missing_rate: 0.1, first_year: 2014, last_year: 2019 }
    }
}

/// `n` synthetic records with the default 10% missingness over 2014–2019.
pub fn generate_synthetic_dataset(n: usize, seed: u64, protocol: Protocol) -> Dataset {
    generate_synthetic_with(&SyntheticOptions { n, seed, protocol, ..Default::default() })
}

const COMPLAINTS: [&[&str]; 5] = [
    &["unresponsive", "cardiac arrest", "severe respiratory distress", "massive hemorrhage", "seizure not stopping"],
    &["chest pain", "shortness of breath", "altered mental status", "syncope", "suicidal ideation"],
    &["abdominal pain", "fever", "vomiting", "headache", "back pain", "dizziness"],
    &["ankle injury", "laceration", "urinary symptoms", "ear pain", "rash"],
    &["medication refill", "sore throat", "cold symptoms", "wound check", "insect bite"],
];

const DURATIONS: [&str; 6] = ["", " for 1 day", " for 2 days", " since this morning", " for a week", " worsening today"];

fn draw_vitals(rng: &mut ChaCha8Rng, target: u8) -> (VitalSigns, u8) {
    let mut v = VitalSigns {
        temperature: Some((rng.gen_range(361..=375) as f64) / 10.0),
        heart_rate: Some(rng.gen_range(60..=100) as f64),
        respiratory_rate: Some(rng.gen_range(12..=20) as f64),
        systolic_bp: Some(rng.gen_range(100..=140) as f64),
        diastolic_bp: Some(rng.gen_range(60..=90) as f64),
        spo2: Some(rng.gen_range(95..=100) as f64),
    };
    let mut pain = rng.gen_range(0..=3u8);
    match target {
        1 => {
            if rng.gen_bool(0.5) {
                v.spo2 = Some(rng.gen_range(70..=84) as f64);
            } else {
                v.heart_rate = Some(rng.gen_range(141..=180) as f64);
            }
        }
        2 => {
            if rng.gen_bool(0.5) {
                v.spo2 = Some(rng.gen_range(86..=91) as f64);
            } else {
                v.systolic_bp = Some(rng.gen_range(70..=89) as f64);
                v.diastolic_bp = Some(rng.gen_range(40..=59) as f64);
            }
        }
        3 => match rng.gen_range(0..3) {
            0 => pain = rng.gen_range(7..=10),
            1 => v.heart_rate = Some(rng.gen_range(101..=130) as f64),
            _ => v.respiratory_rate = Some(rng.gen_range(25..=32) as f64),
        },
        4 => {
            if rng.gen_bool(0.5) {
                pain = rng.gen_range(4..=6);
            } else {
                v.temperature = Some((rng.gen_range(380..=392) as f64) / 10.0);
            }
        }
        _ => {}
    }
    (v, pain)
}

pub fn generate_synthetic_with(opts: &SyntheticOptions) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    // target severity mix: 5% / 20% / 40% / 20% / 15%
    let targets: [(u8, u32); 5] = [(1, 5), (2, 20), (3, 40), (4, 20), (5, 15)];
    let width = opts.n.max(1).to_string().len().max(6);
    let mut records = Vec::with_capacity(opts.n);
    for i in 0..opts.n {
        let roll = rng.gen_range(0..100u32);
        let mut acc = 0;
        let target = targets
            .iter()
            .find(|(_, w)| {
                acc += w;
                roll < acc
            })
            .map(|(t, _)| *t)
            .unwrap_or(5);
        let (mut vitals, pain) = draw_vitals(&mut rng, target);
        let mut pain = Some(pain);
        for kind in VitalKind::ALL {
            if rng.gen_bool(opts.missing_rate) {
                vitals.set(kind, None);
            }
        }
        if rng.gen_bool(opts.missing_rate) {
            pain = None;
        }
        let complaint = COMPLAINTS[(target - 1) as usize].choose(&mut rng).copied().unwrap_or("pain");
        let duration = DURATIONS.choose(&mut rng).copied().unwrap_or("");
        let demographics = Demographics {
            sex: Sex::ALL.choose(&mut rng).copied(),
            race: Race::ALL.choose(&mut rng).copied(),
        };
        let mut extras = IndexMap::new();
        if opts.protocol == Protocol::Ktas {
            let arrival = if target <= 2 { "ambulance" } else { ["walk-in", "public transport", "private vehicle"].choose(&mut rng).copied().unwrap_or("walk-in") };
            extras.insert(KTAS_EXTRA_COLUMNS[0].to_string(), arrival.to_string());
            extras.insert(KTAS_EXTRA_COLUMNS[1].to_string(), if rng.gen_bool(0.2) { "yes" } else { "no" }.to_string());
            let mental = if target == 1 { "verbal response" } else { "alert" };
            extras.insert(KTAS_EXTRA_COLUMNS[2].to_string(), mental.to_string());
        }
        let year = rng.gen_range(opts.first_year..=opts.last_year);
        let mut record = TriageRecord {
            id: format!("syn-{i:0width$}"),
            cohort_year: Some(year),
            vitals,
            pain,
            chief_complaint: format!("{complaint}{duration}"),
            extras,
            label: None,
            demographics,
        };
        record.label = Some(rule_based_acuity(&record));
        records.push(record);
    }
    let extra_columns = match opts.protocol {
        Protocol::Ktas => KTAS_EXTRA_COLUMNS.iter().map(|s| s.to_string()).collect(),
        Protocol::Esi => Vec::new(),
    };
    let name = format!("synthetic-{}-{}-{}", opts.protocol.short_name().to_ascii_lowercase(), opts.n, opts.seed);
    Dataset::new(name, opts.protocol, extra_columns, records).expect("generated ids are unique")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::write_dataset_to;

    #[test]
    fn deterministic_bytes() {
        let a = generate_synthetic_dataset(5, 1, Protocol::Esi);
        let b = generate_synthetic_dataset(5, 1, Protocol::Esi);
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        write_dataset_to(&a, &mut ba, ',').unwrap();
        write_dataset_to(&b, &mut bb, ',').unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn all_levels_present_at_1000() {
        let ds = generate_synthetic_dataset(1000, 9, Protocol::Esi);
        let mut counts = [0usize; 5];
        for r in &ds.records {
            counts[r.label.unwrap().index()] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
    }

    #[test]
    fn zero_missing_rate() {
        let ds = generate_synthetic_with(&SyntheticOptions { n: 200, missing_rate: 0.0, ..Default::default() });
        assert!(ds.records.iter().all(|r| r.missingness_fraction() == 0.0));
    }

    #[test]
    fn ktas_has_extras() {
        let ds = generate_synthetic_dataset(10, 2, Protocol::Ktas);
        assert_eq!(ds.extra_columns.len(), 3);
        assert!(ds.records.iter().all(|r| r.extras.len() == 3));
    }
}
