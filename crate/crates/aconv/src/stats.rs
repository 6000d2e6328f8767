//! Welch's unequal-variance t-test with a two-tailed p-value.

use crate::error::{AconvError, Result};
use statrs::function::beta::beta_reg;

/// Result of a two-sample Welch t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    /// The t statistic (sign follows mean(a) − mean(b)).
    pub t: f64,
    /// Two-tailed p-value from the Student-t distribution.
    pub p: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
}

fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's t-test for independent samples with unequal variances.
///
/// Degenerate inputs are resolved explicitly: when both samples have zero
/// variance, equal means give (t=0, p=1) and unequal means give (t=±∞, p=0),
/// with pooled degrees of freedom in either case.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(AconvError::InvalidArgument(format!(
            "welch_ttest needs at least 2 samples per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_and_var(a);
    let (mb, vb) = mean_and_var(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;

    if se2 == 0.0 {
        let df = na + nb - 2.0;
        return Ok(if ma == mb {
            TTestResult { t: 0.0, p: 1.0, df }
        } else {
            TTestResult { t: (ma - mb).signum() * f64::INFINITY, p: 0.0, df }
        });
    }

    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    // Two-tailed p via the regularized incomplete beta function:
    // p = I_x(df/2, 1/2) with x = df/(df + t²).
    let p = if t.is_infinite() { 0.0 } else { beta_reg(df / 2.0, 0.5, df / (df + t * t)) };
    Ok(TTestResult { t, p, df })
}
