use serde::{Deserialize, Serialize};

use super::EvalError;

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

/// `ln Γ(z)` for `z > 0` (Lanczos, g = 7).
pub fn ln_gamma(z: f64) -> f64 {
    if z < 0.5 {
        // Reflection: Γ(z)Γ(1-z) = π / sin(πz).
        let pi = std::f64::consts::PI;
        return (pi / (pi * z).sin()).ln() - ln_gamma(1.0 - z);
    }
    let z = z - 1.0;
    let mut x = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        x += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + x.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 10_000;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
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
    h
}

/// `I_x(a, b)` with `y = 1 - x` supplied separately so callers can keep
/// precision near `x = 1`.
fn inc_beta(a: f64, b: f64, x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * y.ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, y) / b
    }
}

/// Regularized incomplete beta `I_x(a, b)` for `a, b > 0`, `x ∈ [0, 1]`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    inc_beta(a, b, x, 1.0 - x)
}

/// Two-sided tail `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let t2 = t * t;
    let denom = df + t2;
    inc_beta(df / 2.0, 0.5, df / denom, t2 / denom).clamp(0.0, 1.0)
}

/// Student's t CDF.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * student_t_two_sided_p(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub t_statistic: f64,
    pub p_value: f64,
    pub n_subsets: usize,
    pub mean_difference: f64,
    /// Every difference was identical and nonzero. `t` is then `±f64::MAX`
    /// (a JSON-safe stand-in for infinity) and `p` is 0.
    pub zero_variance: bool,
}

/// Paired t-test on `(base, treat)` pairs; differences are `treat - base`.
pub fn paired_ttest(pairs: &[(f64, f64)]) -> Result<SignificanceResult, EvalError> {
    let n = pairs.len();
    if n < 2 {
        return Err(EvalError::TooFewSubsets(n));
    }
    let diffs: Vec<f64> = pairs.iter().map(|(b, t)| t - b).collect();
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (nf - 1.0);
    let all_same = diffs.iter().all(|&d| d == diffs[0]);
    if var == 0.0 || all_same {
        let zero = mean == 0.0;
        return Ok(SignificanceResult {
            t_statistic: if zero { 0.0 } else { mean.signum() * f64::MAX },
            p_value: if zero { 1.0 } else { 0.0 },
            n_subsets: n,
            mean_difference: mean,
            zero_variance: !zero,
        });
    }
    let t = mean / (var.sqrt() / nf.sqrt());
    Ok(SignificanceResult {
        t_statistic: t,
        p_value: student_t_two_sided_p(t, nf - 1.0),
        n_subsets: n,
        mean_difference: mean,
        zero_variance: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ln_gamma_reference_values() {
        for (z, want) in [
            (0.5, 0.5723649429247001),
            (1.0, 0.0),
            (2.5, 0.2846828704729192),
            (10.0, 12.801827480081469),
            (100.3, 360.5147057290581),
        ] {
            assert!((ln_gamma(z) - want).abs() < 1e-12 * want.abs().max(1.0), "{z}");
        }
    }

    #[test]
    fn incomplete_beta_reference_values() {
        for (a, b, x, want) in [
            (0.5, 0.5, 0.3, 0.36901011956554536),
            (2.0, 3.0, 0.4, 0.5247999999999999),
            (3.5, 0.5, 0.9, 0.40708382206558924),
            (10.0, 10.0, 0.5, 0.5),
            (1.0, 1.0, 0.25, 0.25),
            (50.0, 2.0, 0.97, 0.5451634383685183),
        ] {
            let got = regularized_incomplete_beta(a, b, x);
            assert!((got - want).abs() < 1e-10, "I({a},{b},{x}) = {got}, want {want}");
        }
    }

    #[test]
    fn student_t_reference_values() {
        for (t, df, cdf, p) in [
            (0.5, 1.0, 0.6475836176504333, 0.7048327646991336),
            (1.0, 3.0, 0.8044988905221148, 0.39100221895577053),
            (2.5, 3.0, 0.9561466764959673, 0.08770664700806555),
            (-1.7, 7.0, 0.06646444839127759, 0.13292889678255518),
            (3.2, 7.0, 0.9924670943287554, 0.015065811342489297),
            (10.0, 2.0, 0.9950737714883371, 0.009852457023325692),
            (0.0, 5.0, 0.5, 1.0),
            (4.0, 30.0, 0.9998090771819581, 0.0003818456360837564),
            (0.001, 7.0, 0.5003849913775006, 0.9992300172449988),
            (25.0, 7.0, 0.9999999791015144, 4.179697117659438e-08),
        ] {
            assert!((student_t_cdf(t, df) - cdf).abs() < 1e-10, "cdf({t},{df})");
            assert!((student_t_two_sided_p(t, df) - p).abs() < 1e-10, "p({t},{df})");
        }
    }

    #[test]
    fn paired_ttest_reference_values() {
        let r = paired_ttest(&[(0.0, 1.0), (0.0, 2.0), (0.0, 3.0), (0.0, 4.0)]).unwrap();
        assert!((r.t_statistic - 3.872983346207417).abs() < 1e-12);
        assert!((r.p_value - 0.030466291662170977).abs() < 1e-10);

        let d = [0.3, -0.1, 0.25, 0.05, 0.4, 0.12, -0.02, 0.2];
        let pairs: Vec<(f64, f64)> = d.iter().map(|&x| (1.0, 1.0 + x)).collect();
        let r = paired_ttest(&pairs).unwrap();
        assert!((r.t_statistic - 2.511236011669614).abs() < 1e-9);
        assert!((r.p_value - 0.04032396085849725).abs() < 1e-9);
    }

    #[test]
    fn paired_ttest_edge_cases() {
        let r = paired_ttest(&[(0.5, 0.5); 8]).unwrap();
        assert_eq!((r.p_value, r.zero_variance), (1.0, false));
        let r = paired_ttest(&[(0.5, 0.75); 4]).unwrap();
        assert_eq!(r.p_value, 0.0);
        assert!(r.zero_variance);
        assert!(matches!(paired_ttest(&[(0.1, 0.2)]), Err(EvalError::TooFewSubsets(1))));
    }

    proptest! {
        #[test]
        fn p_value_in_unit_interval(pairs in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..12)) {
            let r = paired_ttest(&pairs).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.p_value));
        }

        #[test]
        fn p_value_invariant_under_common_shift(
            pairs in proptest::collection::vec((0i32..1000, 0i32..1000), 3..10),
            shift in -500i32..500,
        ) {
            // Integer-valued inputs keep the shifted differences exact.
            let base: Vec<(f64, f64)> = pairs.iter().map(|&(a, b)| (a as f64, b as f64)).collect();
            let shifted: Vec<(f64, f64)> = base.iter().map(|&(a, b)| (a + shift as f64, b + shift as f64)).collect();
            prop_assert_eq!(paired_ttest(&base).unwrap().p_value, paired_ttest(&shifted).unwrap().p_value);
        }
    }
}
