use serde::{Deserialize, Serialize};

use super::{EmbeddingVector, RetrievalError};
use crate::dataset::{Dataset, TriageRecord, VitalKind};

/// One component of the vitals embedding: a vital sign or pain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VitalsComponent {
    Vital(VitalKind),
    Pain,
}

impl VitalsComponent {
    pub const ALL: [VitalsComponent; 7] = [
        VitalsComponent::Vital(VitalKind::Temperature),
        VitalsComponent::Vital(VitalKind::HeartRate),
        VitalsComponent::Vital(VitalKind::RespiratoryRate),
        VitalsComponent::Vital(VitalKind::SystolicBp),
        VitalsComponent::Vital(VitalKind::DiastolicBp),
        VitalsComponent::Vital(VitalKind::Spo2),
        VitalsComponent::Pain,
    ];

    pub fn read(self, record: &TriageRecord) -> Option<f64> {
        match self {
            VitalsComponent::Vital(kind) => record.vitals.get(kind),
            VitalsComponent::Pain => record.pain.map(f64::from),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub component: VitalsComponent,
    pub mean: f64,
    /// Population standard deviation (divides by n), always > 0.
    pub std_dev: f64,
}

/// Z-score normalizer for the six vitals plus pain, fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalsNormalizer {
    pub components: Vec<ComponentStats>,
    /// Components dropped because they were constant (or never observed) in training.
    pub dropped: Vec<VitalsComponent>,
}

/// Fits per-component means and population standard deviations on the
/// observed values of `train`. Constant or never-observed components are
/// reported in `dropped` and excluded from every vector.
pub fn fit_normalizer(train: &Dataset) -> Result<VitalsNormalizer, RetrievalError> {
    if train.is_empty() {
        return Err(RetrievalError::EmptyTrainingSet);
    }
    let mut components = Vec::new();
    let mut dropped = Vec::new();
    for component in VitalsComponent::ALL {
        let values: Vec<f64> = train.records.iter().filter_map(|r| component.read(r)).collect();
        if values.is_empty() {
            dropped.push(component);
            continue;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std_dev = var.sqrt();
        if std_dev > 0.0 && std_dev.is_finite() {
            components.push(ComponentStats { component, mean, std_dev });
        } else {
            tracing::debug!(?component, "dropping constant vitals component");
            dropped.push(component);
        }
    }
    Ok(VitalsNormalizer { components, dropped })
}

impl VitalsNormalizer {
    pub fn dimension(&self) -> usize {
        self.components.len()
    }

    /// Z-scored vitals vector; missing values are imputed with the training
    /// mean and therefore contribute 0.
    pub fn vector(&self, record: &TriageRecord) -> EmbeddingVector {
        let values = self
            .components
            .iter()
            .map(|c| c.component.read(record).map_or(0.0, |v| (v - c.mean) / c.std_dev))
            .collect();
        EmbeddingVector::new(values).expect("z-scores of finite values are finite")
    }
}

pub fn vitals_vector(record: &TriageRecord, normalizer: &VitalsNormalizer) -> EmbeddingVector {
    normalizer.vector(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Protocol, VitalSigns};

    fn rec(id: &str, hr: Option<f64>, temp: f64) -> TriageRecord {
        let mut r = TriageRecord::new(id, "cough");
        r.vitals = VitalSigns { heart_rate: hr, temperature: Some(temp), ..Default::default() };
        r
    }

    fn train() -> Dataset {
        Dataset::new("t", Protocol::Esi, vec![], vec![rec("a", Some(60.0), 36.5), rec("b", Some(80.0), 37.5)]).unwrap()
    }

    #[test]
    fn hr_zscore_population_std() {
        let n = fit_normalizer(&train()).unwrap();
        let v = n.vector(&rec("q", Some(80.0), 37.0));
        let hr_idx = n.components.iter().position(|c| c.component == VitalsComponent::Vital(VitalKind::HeartRate)).unwrap();
        assert!((v.values()[hr_idx] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_record_is_zero_vector() {
        let n = fit_normalizer(&train()).unwrap();
        assert!(n.vector(&rec("q", Some(70.0), 37.0)).is_zero());
    }

    #[test]
    fn missing_component_is_zero() {
        let n = fit_normalizer(&train()).unwrap();
        let v = n.vector(&rec("q", None, 37.5));
        let hr_idx = n.components.iter().position(|c| c.component == VitalsComponent::Vital(VitalKind::HeartRate)).unwrap();
        assert_eq!(v.values()[hr_idx], 0.0);
    }

    #[test]
    fn constant_and_unobserved_components_dropped() {
        let ds = Dataset::new("t", Protocol::Esi, vec![], vec![rec("a", Some(70.0), 37.0), rec("b", Some(70.0), 38.0)]).unwrap();
        let n = fit_normalizer(&ds).unwrap();
        assert!(n.dropped.contains(&VitalsComponent::Vital(VitalKind::HeartRate)));
        assert!(n.dropped.contains(&VitalsComponent::Pain));
        assert_eq!(n.dimension(), 1);
    }

    #[test]
    fn empty_train_is_error() {
        let ds = Dataset::new("t", Protocol::Esi, vec![], vec![]).unwrap();
        assert!(matches!(fit_normalizer(&ds), Err(RetrievalError::EmptyTrainingSet)));
    }
}
