//! Nonparametric paired tests and multiple-testing correction.

mod friedman;
mod special;
mod wilcoxon;

use serde::{Deserialize, Serialize};

pub use friedman::friedman;
pub use special::{chi_square_sf, erfc, ln_gamma, normal_sf, regularized_gamma_q};
pub use wilcoxon::{wilcoxon_signed_rank, wilcoxon_signed_rank_with, WilcoxonMethod, EXACT_MAX_N};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Exact,
    NormalApprox,
    ChiSquareApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub method: TestMethod,
    pub notes: String,
}

impl TestResult {
    pub fn is_degenerate(&self) -> bool {
        self.notes.split(';').any(|n| n.trim() == "degenerate")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("statistic must be non-negative, got {0}")]
    NegativeStatistic(f64),
    #[error("degrees of freedom must be at least 1")]
    ZeroDegreesOfFreedom,
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("need at least {needed} {what}, got {got}")]
    TooSmall { what: &'static str, needed: usize, got: usize },
    #[error("row {row} has {got} entries, expected {expected}")]
    Ragged { row: usize, expected: usize, got: usize },
}

/// Bonferroni-adjusted p-value for a family of `m` tests.
pub fn bonferroni(p: f64, m: usize) -> f64 {
    (p * m.max(1) as f64).clamp(0.0, 1.0)
}

/// Average 1-based ranks of `values` (ties share their mean rank), plus the
/// sizes of each tie group with more than one member.
pub(crate) fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}
