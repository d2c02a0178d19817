use super::special::normal_sf;
use super::{average_ranks, StatsError, TestMethod, TestResult};

/// Largest number of nonzero differences for which the exact null
/// distribution is used under [`WilcoxonMethod::Auto`].
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WilcoxonMethod {
    #[default]
    Auto,
    Exact,
    Normal,
}

/// Two-sided Wilcoxon signed-rank test on paired differences.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<TestResult, StatsError> {
    wilcoxon_signed_rank_with(diffs, WilcoxonMethod::Auto)
}

pub fn wilcoxon_signed_rank_with(diffs: &[f64], method: WilcoxonMethod) -> Result<TestResult, StatsError> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nonzero.len();
    let zeros = diffs.len() - n;
    if n == 0 {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            n_effective: 0,
            method: TestMethod::Exact,
            notes: "degenerate; all differences zero".into(),
        });
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    // average ranks are multiples of 1/2, so doubling makes them exact integers
    let doubled: Vec<u64> = ranks.iter().map(|r| (r * 2.0).round() as u64).collect();
    let total: u64 = doubled.iter().sum();
    let w_plus2: u64 = doubled.iter().zip(&nonzero).filter(|(_, &d)| d > 0.0).map(|(r, _)| r).sum();
    let w2 = w_plus2.min(total - w_plus2);
    let statistic = w2 as f64 / 2.0;

    let exact = match method {
        WilcoxonMethod::Auto => n <= EXACT_MAX_N,
        WilcoxonMethod::Exact => true,
        WilcoxonMethod::Normal => false,
    };
    let mut notes = vec![format!("zero differences discarded: {zeros}")];
    if !ties.is_empty() {
        notes.push(format!("tied |d| groups: {}", ties.len()));
    }
    let (p_value, method) = if exact {
        (exact_two_sided(&doubled, w2), TestMethod::Exact)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let p = if var <= 0.0 {
            1.0
        } else {
            let z = ((statistic - mean).abs() - 0.5).max(0.0) / var.sqrt();
            (2.0 * normal_sf(z)).min(1.0)
        };
        (p, TestMethod::NormalApprox)
    };
    Ok(TestResult { statistic, p_value, n_effective: n, method, notes: notes.join("; ") })
}

/// P(min(W+, W−) ≤ w) under the sign-flip null, from the number of sign
/// assignments reaching each doubled rank sum. Equivalent to enumerating all
/// 2^n assignments over the realized (possibly tied) ranks.
fn exact_two_sided(doubled: &[u64], w2: u64) -> f64 {
    let total: u64 = doubled.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let lower: u64 = counts[..=w2 as usize].iter().sum();
    let upper: u64 = counts[(total - w2) as usize..].iter().sum();
    let hits = if w2 * 2 >= total { 1u64 << doubled.len() } else { lower + upper };
    let p = hits as f64 / (1u64 << doubled.len()) as f64;
    p.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute force: visit every sign assignment of the realized ranks.
    fn enumerate_p(diffs: &[f64]) -> f64 {
        let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
        let n = nz.len();
        let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
        let rank = |i: usize| {
            let less = abs.iter().filter(|&&a| a < abs[i]).count() as f64;
            let eq = abs.iter().filter(|&&a| a == abs[i]).count() as f64;
            less + (eq + 1.0) / 2.0
        };
        let ranks: Vec<f64> = (0..n).map(rank).collect();
        let total: f64 = ranks.iter().sum();
        let obs_plus: f64 = (0..n).filter(|&i| nz[i] > 0.0).map(|i| ranks[i]).sum();
        let obs = obs_plus.min(total - obs_plus);
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let wp: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if wp.min(total - wp) <= obs {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn five_positive_differences() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 0.0625);
        assert_eq!(r.method, TestMethod::Exact);
    }

    #[test]
    fn all_zero_is_degenerate() {
        let r = wilcoxon_signed_rank(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.statistic, 0.0);
        assert!(r.is_degenerate());
    }

    #[test]
    fn matches_enumeration_with_ties_and_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let n = rng.gen_range(1..=12);
            let diffs: Vec<f64> = (0..n).map(|_| rng.gen_range(-3i32..=3) as f64).collect();
            if diffs.iter().all(|&d| d == 0.0) {
                continue;
            }
            let got = wilcoxon_signed_rank(&diffs).unwrap().p_value;
            assert_eq!(got, enumerate_p(&diffs), "{diffs:?}");
        }
    }

    #[test]
    fn normal_error_at_fifteen_is_bounded() {
        // one vector per achievable W = 0..=60: negate ranks greedily until
        // the negative rank sum reaches W
        let mut worst: f64 = 0.0;
        for target in 0..=60u32 {
            let mut left = target;
            let mut diffs: Vec<f64> = (1..=15).map(|i| i as f64).collect();
            for r in (1..=15u32).rev() {
                if r <= left {
                    diffs[r as usize - 1] = -(r as f64);
                    left -= r;
                }
            }
            let exact = wilcoxon_signed_rank_with(&diffs, WilcoxonMethod::Exact).unwrap();
            assert_eq!(exact.statistic, target as f64);
            let approx = wilcoxon_signed_rank_with(&diffs, WilcoxonMethod::Normal).unwrap().p_value;
            worst = worst.max((exact.p_value - approx).abs());
        }
        assert!(worst > 0.0105, "{worst}");
        assert!(worst < 0.0111, "{worst}");
        // in the tail the approximation is much tighter
        let diffs: Vec<f64> = (1..=15).map(|i| if i <= 3 { -(i as f64) } else { i as f64 }).collect();
        let exact = wilcoxon_signed_rank_with(&diffs, WilcoxonMethod::Exact).unwrap().p_value;
        let approx = wilcoxon_signed_rank_with(&diffs, WilcoxonMethod::Normal).unwrap().p_value;
        assert!((exact - approx).abs() < 0.002, "{exact} vs {approx}");
    }

    #[test]
    fn auto_switches_above_threshold() {
        let diffs: Vec<f64> = (1..=30).map(|i| i as f64 * if i % 3 == 0 { -1.0 } else { 1.0 }).collect();
        assert_eq!(wilcoxon_signed_rank(&diffs).unwrap().method, TestMethod::NormalApprox);
        assert_eq!(wilcoxon_signed_rank(&diffs[..25]).unwrap().method, TestMethod::Exact);
    }

    proptest! {
        #[test]
        fn negation_invariant(diffs in proptest::collection::vec(-5i32..=5, 1..30)) {
            let d: Vec<f64> = diffs.iter().map(|&x| x as f64).collect();
            let neg: Vec<f64> = d.iter().map(|x| -x).collect();
            let a = wilcoxon_signed_rank(&d).unwrap();
            let b = wilcoxon_signed_rank(&neg).unwrap();
            prop_assert_eq!(a.p_value, b.p_value);
            prop_assert!((0.0..=1.0).contains(&a.p_value));
            prop_assert!(a.n_effective <= d.len());
        }
    }
}
