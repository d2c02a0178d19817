//! Agreement metrics between predicted and gold acuity.

use serde::{Deserialize, Serialize};

use crate::dataset::AcuityLevel;

const K: usize = AcuityLevel::COUNT;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("no scored predictions")]
    EmptyPredictionSet,
    #[error("empty input")]
    EmptyInput,
    #[error("gold has {gold} entries but predictions have {predicted}")]
    LengthMismatch { gold: usize, predicted: usize },
}

/// Gold/predicted pairs plus the number of items dropped as unparseable.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub pairs: Vec<(AcuityLevel, AcuityLevel)>,
    pub excluded_count: usize,
}

impl PredictionSet {
    pub fn new(pairs: Vec<(AcuityLevel, AcuityLevel)>) -> Self {
        Self { pairs, excluded_count: 0 }
    }

    /// Pairs each gold label with its prediction; `None` predictions are
    /// counted as excluded.
    pub fn from_predictions(gold: &[AcuityLevel], predicted: &[Option<AcuityLevel>]) -> Result<Self, MetricsError> {
        if gold.len() != predicted.len() {
            return Err(MetricsError::LengthMismatch { gold: gold.len(), predicted: predicted.len() });
        }
        let mut set = Self::default();
        for (g, p) in gold.iter().zip(predicted) {
            match p {
                Some(p) => set.pairs.push((*g, *p)),
                None => set.excluded_count += 1,
            }
        }
        Ok(set)
    }

    pub fn from_levels(gold: &[u8], predicted: &[u8]) -> Result<Self, MetricsError> {
        if gold.len() != predicted.len() {
            return Err(MetricsError::LengthMismatch { gold: gold.len(), predicted: predicted.len() });
        }
        let level = |v: u8| AcuityLevel::new(v).expect("level in 1..=5");
        Ok(Self::new(gold.iter().zip(predicted).map(|(&g, &p)| (level(g), level(p))).collect()))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn non_empty(&self) -> Result<&Self, MetricsError> {
        if self.pairs.is_empty() {
            Err(MetricsError::EmptyPredictionSet)
        } else {
            Ok(self)
        }
    }
}

/// Counts indexed `[gold][predicted]`, level 1 first.
pub type Confusion = [[u64; K]; K];

pub fn confusion(p: &PredictionSet) -> Confusion {
    let mut m = [[0u64; K]; K];
    for (g, q) in &p.pairs {
        m[g.index()][q.index()] += 1;
    }
    m
}

pub fn accuracy(p: &PredictionSet) -> Result<f64, MetricsError> {
    let p = p.non_empty()?;
    let hits = p.pairs.iter().filter(|(g, q)| g == q).count();
    Ok(hits as f64 / p.len() as f64)
}

/// Mean squared difference on the raw 1–5 scale.
pub fn mse(p: &PredictionSet) -> Result<f64, MetricsError> {
    let p = p.non_empty()?;
    let sum: f64 = p.pairs.iter().map(|(g, q)| (g.get() as f64 - q.get() as f64).powi(2)).sum();
    Ok(sum / p.len() as f64)
}

/// Which classes enter the macro average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacroClasses {
    /// Classes appearing in gold or predictions.
    #[default]
    Observed,
    AllFive,
}

fn per_class_f1(m: &Confusion) -> [f64; K] {
    let mut f1 = [0.0; K];
    for c in 0..K {
        let tp = m[c][c] as f64;
        let predicted: f64 = (0..K).map(|g| m[g][c] as f64).sum();
        let actual: f64 = m[c].iter().map(|&v| v as f64).sum();
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if actual > 0.0 { tp / actual } else { 0.0 };
        f1[c] = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    }
    f1
}

pub fn macro_f1(p: &PredictionSet) -> Result<f64, MetricsError> {
    macro_f1_with(p, MacroClasses::Observed)
}

pub fn macro_f1_with(p: &PredictionSet, classes: MacroClasses) -> Result<f64, MetricsError> {
    let m = confusion(p.non_empty()?);
    let f1 = per_class_f1(&m);
    let included: Vec<usize> = (0..K)
        .filter(|&c| match classes {
            MacroClasses::AllFive => true,
            MacroClasses::Observed => m[c].iter().any(|&v| v > 0) || (0..K).any(|g| m[g][c] > 0),
        })
        .collect();
    Ok(included.iter().map(|&c| f1[c]).sum::<f64>() / included.len() as f64)
}

/// Per-class F-1 averaged with weights equal to gold support.
pub fn weighted_f1(p: &PredictionSet) -> Result<f64, MetricsError> {
    let m = confusion(p.non_empty()?);
    let f1 = per_class_f1(&m);
    let n = p.len() as f64;
    Ok((0..K).map(|c| f1[c] * m[c].iter().sum::<u64>() as f64 / n).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Qwk {
    pub kappa: f64,
    /// Both raters constant and equal, so chance disagreement is zero and
    /// kappa is reported as 1.
    pub degenerate: bool,
}

/// Quadratic-weighted Cohen's kappa over the five levels.
pub fn qwk(p: &PredictionSet) -> Result<Qwk, MetricsError> {
    let p = p.non_empty()?;
    let m = confusion(p);
    let n = p.len() as f64;
    let mut gold = [0.0; K];
    let mut pred = [0.0; K];
    for i in 0..K {
        for j in 0..K {
            gold[i] += m[i][j] as f64 / n;
            pred[j] += m[i][j] as f64 / n;
        }
    }
    let denom = ((K - 1) * (K - 1)) as f64;
    let (mut wo, mut we) = (0.0, 0.0);
    for i in 0..K {
        for j in 0..K {
            let w = ((i as f64 - j as f64).powi(2)) / denom;
            wo += w * m[i][j] as f64 / n;
            we += w * gold[i] * pred[j];
        }
    }
    if we == 0.0 {
        return Ok(Qwk { kappa: 1.0, degenerate: true });
    }
    Ok(Qwk { kappa: 1.0 - wo / we, degenerate: false })
}

/// Share of each level, level 1 first.
pub fn level_distribution(levels: &[AcuityLevel]) -> Result<[f64; K], MetricsError> {
    if levels.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut counts = [0usize; K];
    for l in levels {
        counts[l.index()] += 1;
    }
    let n = levels.len() as f64;
    Ok(counts.map(|c| c as f64 / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub qwk: f64,
    pub qwk_degenerate: bool,
    pub mse: f64,
    pub confusion: Confusion,
    pub n: usize,
    pub excluded_count: usize,
}

impl MetricReport {
    pub fn compute(p: &PredictionSet) -> Result<Self, MetricsError> {
        let k = qwk(p)?;
        Ok(Self {
            accuracy: accuracy(p)?,
            macro_f1: macro_f1(p)?,
            weighted_f1: weighted_f1(p)?,
            qwk: k.kappa,
            qwk_degenerate: k.degenerate,
            mse: mse(p)?,
            confusion: confusion(p),
            n: p.len(),
            excluded_count: p.excluded_count,
        })
    }
}

/// Fixed-width table with one row per labelled report, columns
/// QWK, MSE, F-1, Acc.
pub fn render_metric_table(rows: &[(String, MetricReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0).max("Model".len());
    let mut out = format!("{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>6}  {:>8}\n", "Model", "QWK", "MSE", "F-1", "Acc.", "n", "excluded");
    out.push_str(&"-".repeat(width + 2 + 9 * 4 + 8 + 10));
    out.push('\n');
    for (label, r) in rows {
        out.push_str(&format!(
            "{label:<width$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}  {:>6}  {:>8}\n",
            r.qwk, r.mse, r.macro_f1, r.accuracy, r.n, r.excluded_count
        ));
    }
    out
}
