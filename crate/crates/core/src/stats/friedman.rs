use super::special::chi_square_sf;
use super::{average_ranks, StatsError, TestMethod, TestResult};

/// Friedman rank test. Rows are blocks (subjects), columns treatments.
pub fn friedman(matrix: &[Vec<f64>]) -> Result<TestResult, StatsError> {
    let n = matrix.len();
    if n < 2 {
        return Err(StatsError::TooSmall { what: "blocks", needed: 2, got: n });
    }
    let k = matrix[0].len();
    if k < 2 {
        return Err(StatsError::TooSmall { what: "treatments", needed: 2, got: k });
    }
    let mut rank_sums = vec![0.0; k];
    let mut tie_sum = 0.0;
    for (row_idx, row) in matrix.iter().enumerate() {
        if row.len() != k {
            return Err(StatsError::Ragged { row: row_idx, expected: k, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        let (ranks, ties) = average_ranks(row);
        for (s, r) in rank_sums.iter_mut().zip(ranks) {
            *s += r;
        }
        tie_sum += ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
    }
    let (nf, kf) = (n as f64, k as f64);
    let correction = 1.0 - tie_sum / (nf * kf * (kf * kf - 1.0));
    if correction <= 1e-12 {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            n_effective: n,
            method: TestMethod::ChiSquareApprox,
            notes: "degenerate; every block fully tied".into(),
        });
    }
    let centre = (kf + 1.0) / 2.0;
    let spread: f64 = rank_sums.iter().map(|s| (s / nf - centre).powi(2)).sum();
    let q = 12.0 * nf / (kf * (kf + 1.0)) * spread / correction;
    let p = chi_square_sf(q, k - 1)?;
    Ok(TestResult {
        statistic: q,
        p_value: p,
        n_effective: n,
        method: TestMethod::ChiSquareApprox,
        notes: format!("df = {}; tie correction = {correction:.6}", k - 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn same_order_every_block() {
        let m = vec![vec![1.0, 2.0, 3.0]; 3];
        let r = friedman(&m).unwrap();
        assert!((r.statistic - 6.0).abs() < 1e-12);
        assert!((r.p_value - (-3.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn all_tied_is_degenerate() {
        let m = vec![vec![4.0; 6]; 10];
        let r = friedman(&m).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(r.is_degenerate());
    }

    #[test]
    fn tie_correction_applied() {
        // block 1 fully tied, block 2 ranks (1, 2.5, 2.5), block 3 ordered
        let m = vec![vec![3.0, 3.0, 3.0], vec![1.0, 2.0, 2.0], vec![1.0, 2.0, 3.0]];
        // rank sums: (2+1+1, 2+2.5+2, 2+2.5+3) = (4, 6.5, 7.5); means (4/3, 13/6, 5/2)
        let spread = (4.0f64 / 3.0 - 2.0).powi(2) + (13.0f64 / 6.0 - 2.0).powi(2) + 0.25;
        let raw = 12.0 * 3.0 / 12.0 * spread;
        let c = 1.0 - (24.0 + 6.0) / (3.0 * 3.0 * 8.0);
        let r = friedman(&m).unwrap();
        assert!((r.statistic - raw / c).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(friedman(&[vec![1.0, 2.0]]), Err(StatsError::TooSmall { .. })));
        assert!(matches!(friedman(&[vec![1.0], vec![2.0]]), Err(StatsError::TooSmall { .. })));
        assert!(matches!(friedman(&[vec![1.0, 2.0], vec![1.0]]), Err(StatsError::Ragged { .. })));
    }

    proptest! {
        #[test]
        fn monotone_transform_invariant(
            rows in proptest::collection::vec(proptest::collection::vec(-4i32..=4, 4), 2..12),
            shift in -100.0f64..100.0,
        ) {
            let m: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect();
            let t: Vec<Vec<f64>> = m.iter().map(|r| r.iter().map(|x| (x * 0.5).exp() + shift).collect()).collect();
            let a = friedman(&m).unwrap();
            let b = friedman(&t).unwrap();
            prop_assert!((a.statistic - b.statistic).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&a.p_value));
        }
    }
}
