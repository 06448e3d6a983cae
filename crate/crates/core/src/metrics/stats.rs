//! Welch's t-test and McNemar's test.
//!
//! Two-sided t p-values come from the regularized incomplete beta function:
//! `p = I_{ν/(ν+t²)}(ν/2, 1/2)`.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use super::MetricsError;

/// Significance threshold used throughout the reports.
pub const ALPHA: f64 = 0.01;

/// Discordant totals below this use the exact binomial branch.
pub const MCNEMAR_EXACT_LIMIT: u64 = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatTest {
    WelchT,
    McnemarExact,
    McnemarChi2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub test: StatTest,
    pub statistic: f64,
    pub p_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    pub significant_at: f64,
    pub significant: bool,
}

impl StatTestResult {
    fn new(test: StatTest, statistic: f64, p_value: f64, df: Option<f64>) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self {
            test,
            statistic,
            p_value,
            df,
            significant_at: ALPHA,
            significant: p_value < ALPHA,
        }
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided Student t tail probability `P(|T| >= |t|)` with `df` degrees of
/// freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

pub fn welch_t_test(xs: &[f64], ys: &[f64]) -> Result<StatTestResult, MetricsError> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(MetricsError::InsufficientSamples { left: xs.len(), right: ys.len() });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let (m1, v1) = mean_var(xs);
    let (m2, v2) = mean_var(ys);
    let (n1, n2) = (xs.len() as f64, ys.len() as f64);
    let (a, b) = (v1 / n1, v2 / n2);
    let se2 = a + b;
    if se2 == 0.0 {
        // Both samples constant: equal means carry no evidence, unequal
        // means give an unbounded statistic.
        if m1 == m2 {
            return Ok(StatTestResult::new(StatTest::WelchT, 0.0, 1.0, None));
        }
        return Err(MetricsError::DegenerateVariance);
    }
    let t = (m1 - m2) / se2.sqrt();
    let df = se2 * se2 / (a * a / (n1 - 1.0) + b * b / (n2 - 1.0));
    Ok(StatTestResult::new(StatTest::WelchT, t, student_t_two_sided(t, df), Some(df)))
}

/// McNemar's test on discordant pair counts: `b` items only the first
/// system got right, `c` items only the second did.
pub fn mcnemar_test(b: u64, c: u64) -> StatTestResult {
    let n = b + c;
    if n == 0 {
        return StatTestResult::new(StatTest::McnemarExact, 0.0, 1.0, None);
    }
    if n < MCNEMAR_EXACT_LIMIT {
        let k = b.min(c);
        // n <= 24, so every binomial coefficient and their sum are exact.
        let mut coef: u64 = 1;
        let mut tail: u64 = 0;
        for i in 0..=k {
            if i > 0 {
                coef = coef * (n - i + 1) / i;
            }
            tail += coef;
        }
        let p = (2.0 * tail as f64 / (1u64 << n) as f64).min(1.0);
        return StatTestResult::new(StatTest::McnemarExact, k as f64, p, None);
    }
    let diff = (b as f64 - c as f64).abs() - 1.0;
    let chi2 = diff.max(0.0).powi(2) / n as f64;
    StatTestResult::new(StatTest::McnemarChi2, chi2, erfc((chi2 / 2.0).sqrt()), Some(1.0))
}

/// Discordant counts from paired correctness vectors.
pub fn discordant_pairs(a: &[bool], b: &[bool]) -> (u64, u64) {
    a.iter().zip(b).fold((0, 0), |(only_a, only_b), (&x, &y)| match (x, y) {
        (true, false) => (only_a + 1, only_b),
        (false, true) => (only_a, only_b + 1),
        _ => (only_a, only_b),
    })
}
