use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, TriageRecord};
use crate::apportion::largest_remainder;
use crate::seeds::keyed_seed;

/// Inclusive year interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub start: i32,
    pub end: i32,
}

impl YearRange {
    pub fn new(start: i32, end: i32) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, year: i32) -> bool {
        year >= self.start && year <= self.end
    }

    pub fn overlaps(&self, other: &YearRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl fmt::Display for YearRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}–{}", self.start, self.end)
    }
}

/// How a record's missingness is bucketed for stratification.
///
/// A fraction `f` falls in bucket `i` where `i` is the number of edges
/// strictly below `f`. The default edges `[0, 0.25, 0.5]` give the buckets
/// `{0}`, `(0, .25]`, `(.25, .5]`, `(.5, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissingnessPolicy {
    pub edges: Vec<f64>,
    pub count_pain: bool,
}

impl Default for MissingnessPolicy {
    fn default() -> Self {
        Self { edges: vec![0.0, 0.25, 0.5], count_pain: true }
    }
}

impl MissingnessPolicy {
    pub fn fraction(&self, record: &TriageRecord) -> f64 {
        let slots = if self.count_pain { 7 } else { 6 };
        record.missing_count(self.count_pain) as f64 / slots as f64
    }

    pub fn bucket(&self, record: &TriageRecord) -> u8 {
        let f = self.fraction(record);
        self.edges.iter().filter(|&&e| e < f).count() as u8
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_years: YearRange,
    pub test_years: YearRange,
    pub train_n: usize,
    pub test_n: usize,
    pub seed: u64,
    #[serde(default)]
    pub missingness: MissingnessPolicy,
}

/// Stratum = acuity level × missingness bucket. Ordered lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StratumKey {
    pub acuity: u8,
    pub bucket: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumQuota {
    pub key: StratumKey,
    pub population: usize,
    pub quota: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub train_quotas: Vec<StratumQuota>,
    pub test_quotas: Vec<StratumQuota>,
    /// Records in either cohort skipped because they carry no label.
    pub unlabeled_excluded: usize,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub report: SplitReport,
}

/// Draws `n` records stratified by acuity × missingness bucket.
///
/// Quotas are proportional to stratum populations with largest-remainder
/// rounding (ties go to the lexicographically smaller stratum key). Members
/// are drawn by a seeded shuffle of each stratum sorted by id, and the
/// result keeps the input order. Records without a label are ignored.
pub fn stratified_sample<'a>(
    records: &[&'a TriageRecord],
    n: usize,
    seed: u64,
    policy: &MissingnessPolicy,
) -> (Vec<&'a TriageRecord>, Vec<StratumQuota>) {
    let mut strata: BTreeMap<StratumKey, Vec<(usize, &'a TriageRecord)>> = BTreeMap::new();
    for (pos, r) in records.iter().enumerate() {
        let Some(label) = r.label else { continue };
        let key = StratumKey { acuity: label.get(), bucket: policy.bucket(r) };
        strata.entry(key).or_default().push((pos, r));
    }
    let populations: Vec<usize> = strata.values().map(Vec::len).collect();
    let quotas = largest_remainder(&populations, n);

    let mut chosen: Vec<(usize, &'a TriageRecord)> = Vec::with_capacity(n);
    let mut report = Vec::with_capacity(strata.len());
    for ((key, mut members), quota) in strata.into_iter().zip(quotas) {
        report.push(StratumQuota { key, population: members.len(), quota });
        members.sort_by(|a, b| a.1.id.cmp(&b.1.id));
        let mut rng = ChaCha8Rng::seed_from_u64(keyed_seed(seed, &format!("stratum/{}/{}", key.acuity, key.bucket)));
        let (picked, _) = members.partial_shuffle(&mut rng, quota);
        chosen.extend_from_slice(picked);
    }
    chosen.sort_by_key(|(pos, _)| *pos);
    (chosen.into_iter().map(|(_, r)| r).collect(), report)
}

/// Splits `dataset` into temporally disjoint train and test cohorts.
///
/// Train members come only from `spec.train_years`, test members only from
/// `spec.test_years`; each cohort is sampled with [`stratified_sample`].
/// Unlabeled records stay in the source dataset but never enter a split.
pub fn temporal_stratified_split(dataset: &Dataset, spec: &SplitSpec) -> Result<Split, DatasetError> {
    if spec.train_years.overlaps(&spec.test_years) {
        return Err(DatasetError::OverlappingYearRanges { train: spec.train_years, test: spec.test_years });
    }
    let mut unlabeled = 0;
    let mut cohort = |range: YearRange| -> Vec<&TriageRecord> {
        dataset
            .records
            .iter()
            .filter(|r| r.cohort_year.is_some_and(|y| range.contains(y)))
            .filter(|r| {
                let has = r.label.is_some();
                unlabeled += usize::from(!has);
                has
            })
            .collect()
    };
    let train_pool = cohort(spec.train_years);
    let test_pool = cohort(spec.test_years);
    for (name, pool, n, range) in [
        ("train", &train_pool, spec.train_n, spec.train_years),
        ("test", &test_pool, spec.test_n, spec.test_years),
    ] {
        if pool.len() < n {
            return Err(DatasetError::InsufficientRecords {
                cohort: format!("{name} {range}"),
                requested: n,
                available: pool.len(),
            });
        }
    }
    let (train, train_quotas) = stratified_sample(&train_pool, spec.train_n, keyed_seed(spec.seed, "train"), &spec.missingness);
    let (test, test_quotas) = stratified_sample(&test_pool, spec.test_n, keyed_seed(spec.seed, "test"), &spec.missingness);
    Ok(Split {
        train: dataset.with_records(format!("{}-train", dataset.name), train.into_iter().cloned().collect()),
        test: dataset.with_records(format!("{}-test", dataset.name), test.into_iter().cloned().collect()),
        report: SplitReport { train_quotas, test_quotas, unlabeled_excluded: unlabeled },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AcuityLevel, Protocol, VitalSigns};

    fn full_vitals() -> VitalSigns {
        VitalSigns {
            temperature: Some(37.0),
            heart_rate: Some(80.0),
            respiratory_rate: Some(16.0),
            systolic_bp: Some(120.0),
            diastolic_bp: Some(80.0),
            spo2: Some(98.0),
        }
    }

    fn rec(id: &str, year: i32, level: u8) -> TriageRecord {
        let mut r = TriageRecord::new(id, "cough");
        r.cohort_year = Some(year);
        r.label = Some(AcuityLevel::new(level).unwrap());
        r.vitals = full_vitals();
        r.pain = Some(2);
        r
    }

    #[test]
    fn bucket_edges() {
        let p = MissingnessPolicy::default();
        let mut r = rec("a", 2015, 3);
        assert_eq!(p.bucket(&r), 0);
        r.pain = None; // 1/7
        assert_eq!(p.bucket(&r), 1);
        r.vitals.spo2 = None; // 2/7 > .25
        assert_eq!(p.bucket(&r), 2);
        r.vitals = VitalSigns::default(); // 7/7
        assert_eq!(p.bucket(&r), 3);
    }

    #[test]
    fn single_stratum_reproducible() {
        let records: Vec<_> = (0..100).map(|i| rec(&format!("r{i:03}"), 2015, 3)).collect();
        let refs: Vec<_> = records.iter().collect();
        let p = MissingnessPolicy::default();
        let (a, q) = stratified_sample(&refs, 10, 7, &p);
        let (b, _) = stratified_sample(&refs, 10, 7, &p);
        assert_eq!(a.len(), 10);
        assert_eq!(q.len(), 1);
        assert_eq!(a, b);
    }

    #[test]
    fn quotas_75_25() {
        let mut records: Vec<_> = (0..75).map(|i| rec(&format!("a{i:03}"), 2015, 2)).collect();
        records.extend((0..25).map(|i| rec(&format!("b{i:03}"), 2015, 4)));
        let refs: Vec<_> = records.iter().collect();
        let p = MissingnessPolicy::default();
        let (picked, quotas) = stratified_sample(&refs, 8, 1, &p);
        assert_eq!(quotas.iter().map(|q| q.quota).collect::<Vec<_>>(), vec![6, 2]);
        assert_eq!(picked.iter().filter(|r| r.label.unwrap().get() == 2).count(), 6);
    }

    #[test]
    fn different_seeds_same_quotas() {
        let mut records: Vec<_> = (0..75).map(|i| rec(&format!("a{i:03}"), 2015, 2)).collect();
        records.extend((0..25).map(|i| rec(&format!("b{i:03}"), 2015, 4)));
        let refs: Vec<_> = records.iter().collect();
        let p = MissingnessPolicy::default();
        let (a, qa) = stratified_sample(&refs, 8, 1, &p);
        let (b, qb) = stratified_sample(&refs, 8, 2, &p);
        assert_eq!(qa, qb);
        assert_ne!(a, b);
    }

    #[test]
    fn temporal_split_respects_years_and_errors() {
        let mut records: Vec<_> = (0..30).map(|i| rec(&format!("tr{i}"), 2015, 1 + (i % 5) as u8)).collect();
        records.extend((0..10).map(|i| rec(&format!("te{i}"), 2018, 3)));
        let mut unl = rec("u", 2015, 3);
        unl.label = None;
        records.push(unl);
        let ds = Dataset::new("d", Protocol::Esi, vec![], records).unwrap();
        let spec = SplitSpec {
            train_years: YearRange::new(2014, 2016),
            test_years: YearRange::new(2017, 2019),
            train_n: 20,
            test_n: 5,
            seed: 3,
            missingness: MissingnessPolicy::default(),
        };
        let split = temporal_stratified_split(&ds, &spec).unwrap();
        assert_eq!(split.train.len(), 20);
        assert_eq!(split.test.len(), 5);
        assert!(split.train.records.iter().all(|r| r.cohort_year == Some(2015)));
        assert!(split.test.records.iter().all(|r| r.cohort_year == Some(2018)));
        assert_eq!(split.report.unlabeled_excluded, 1);

        let too_many = SplitSpec { test_n: 11, ..spec.clone() };
        assert!(matches!(temporal_stratified_split(&ds, &too_many), Err(DatasetError::InsufficientRecords { .. })));
        let overlap = SplitSpec { test_years: YearRange::new(2016, 2019), ..spec };
        assert!(matches!(temporal_stratified_split(&ds, &overlap), Err(DatasetError::OverlappingYearRanges { .. })));
    }
}
