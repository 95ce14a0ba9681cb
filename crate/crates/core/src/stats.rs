//! Summary statistics and Welch's two-sample t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.05;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n − 1 denominator); 0 for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        MeanStd {
            mean: mean(xs),
            std: sample_std(xs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub metric: String,
    pub t_statistic: f64,
    pub df: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub significant: bool,
}

/// Welch's unequal-variance t-test, two-sided.
pub fn welch_ttest(metric: &str, a: &[f64], b: &[f64], alpha: f64) -> Result<ComparisonResult> {
    for (side, xs) in [("a", a), ("b", b)] {
        if xs.len() < 2 {
            return Err(Error::domain(format!(
                "{metric}: sample {side} needs at least 2 values, has {}",
                xs.len()
            )));
        }
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain(format!(
                "{metric}: sample {side} contains non-finite values"
            )));
        }
        if sample_variance(xs) == 0.0 {
            return Err(Error::domain(format!(
                "{metric}: sample {side} has zero variance"
            )));
        }
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_variance(a) / na, sample_variance(b) / nb);
    let se2 = va + vb;
    let t = (mean(a) - mean(b)) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::domain(format!("{metric}: t distribution: {e}")))?;
    // sf(|t|) avoids cancellation in 1 - cdf for large |t|
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(ComparisonResult {
        metric: metric.to_string(),
        t_statistic: t,
        df,
        p_value: p,
        alpha,
        significant: p < alpha,
    })
}
