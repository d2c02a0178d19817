//! Gamma-function family needed for chi-square and normal tail probabilities.

use super::StatsError;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;
const TINY: f64 = 1e-300;

/// Lower regularized gamma P(a, x) by its power series; converges fast for x < a + 1.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

/// Upper regularized gamma Q(a, x) by Lentz's continued fraction; for x ≥ a + 1.
fn gamma_q_fraction(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    ((-x + a * x.ln() - ln_gamma(a)).exp() * h).clamp(0.0, 1.0)
}

/// Upper regularized incomplete gamma Q(a, x) = Γ(a, x) / Γ(a).
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        (1.0 - gamma_p_series(a, x)).clamp(0.0, 1.0)
    } else {
        gamma_q_fraction(a, x)
    }
}

/// Upper tail P(X ≥ x) of a chi-square distribution with `df` degrees of freedom.
pub fn chi_square_sf(x: f64, df: usize) -> Result<f64, StatsError> {
    if df == 0 {
        return Err(StatsError::ZeroDegreesOfFreedom);
    }
    if x.is_nan() {
        return Err(StatsError::NonFinite);
    }
    if x < 0.0 {
        return Err(StatsError::NegativeStatistic(x));
    }
    Ok(regularized_gamma_q(df as f64 / 2.0, x / 2.0))
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x >= 0.0 {
        regularized_gamma_q(0.5, x * x)
    } else {
        2.0 - regularized_gamma_q(0.5, x * x)
    }
}

/// Standard normal upper tail P(Z ≥ z).
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// P(X ≥ x) by composite Simpson integration of the chi-square density
    /// over [0, x], used as an independent check.
    fn chi_square_sf_by_quadrature(x: f64, df: usize) -> f64 {
        let k = df as f64 / 2.0;
        let log_norm = -(k * 2f64.ln() + ln_gamma_by_factorial(df));
        // substitution t = u² removes the df = 1 endpoint singularity:
        // f(u²)·2u = 2·exp(log_norm + (df − 1)·ln u − u²/2)
        let g = |u: f64| {
            if u == 0.0 {
                return if df == 1 { 2.0 * log_norm.exp() } else { 0.0 };
            }
            2.0 * (log_norm + (df as f64 - 1.0) * u.ln() - u * u / 2.0).exp()
        };
        let b = x.sqrt();
        let n = 200_000;
        let h = b / n as f64;
        let mut s = g(0.0) + g(b);
        for i in 1..n {
            s += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        1.0 - s * h / 3.0
    }

    /// ln Γ(df/2) from the half-integer recurrence, independent of Lanczos.
    fn ln_gamma_by_factorial(df: usize) -> f64 {
        let mut v = if df.is_multiple_of(2) { 0.0 } else { std::f64::consts::PI.sqrt().ln() };
        let mut a = if df.is_multiple_of(2) { 1.0 } else { 0.5 };
        while a < df as f64 / 2.0 {
            v += a.ln();
            a += 1.0;
        }
        v
    }

    #[test]
    fn chi_square_known_quantile() {
        let p = chi_square_sf(3.841459, 1).unwrap();
        assert!((p - 0.05).abs() < 1e-6, "{p}");
        let q = chi_square_sf_by_quadrature(3.841459, 1);
        assert!((p - q).abs() < 1e-8, "{p} vs {q}");
    }

    #[test]
    fn chi_square_matches_quadrature() {
        for df in 1..=11 {
            for &x in &[0.1, 0.5, 1.0, 2.0, 5.0, 9.5, 15.0, 30.0] {
                let p = chi_square_sf(x, df).unwrap();
                let q = chi_square_sf_by_quadrature(x, df);
                assert!((p - q).abs() < 1e-8, "df={df} x={x}: {p} vs {q}");
            }
        }
    }

    #[test]
    fn chi_square_limits() {
        assert_eq!(chi_square_sf(0.0, 4).unwrap(), 1.0);
        assert!(chi_square_sf(1e6, 3).unwrap() < 1e-300);
        assert!(matches!(chi_square_sf(-1.0, 1), Err(StatsError::NegativeStatistic(_))));
        assert!(matches!(chi_square_sf(1.0, 0), Err(StatsError::ZeroDegreesOfFreedom)));
    }

    #[test]
    fn chi_square_df2_closed_form() {
        for &x in &[0.3, 1.7, 4.0, 12.0, 40.0] {
            let p = chi_square_sf(x, 2).unwrap();
            assert!((p - (-x / 2.0f64).exp()).abs() < 1e-13);
        }
    }

    #[test]
    fn ln_gamma_integers() {
        let mut fact = 1.0f64;
        for n in 1..20 {
            assert!((ln_gamma(n as f64) - fact.ln()).abs() < 1e-12, "n={n}");
            fact *= n as f64;
        }
    }

    #[test]
    fn normal_tail() {
        assert!((normal_sf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_sf(1.959963984540054) - 0.025).abs() < 1e-12);
        assert!((normal_sf(-1.0) + normal_sf(1.0) - 1.0).abs() < 1e-14);
    }
}
