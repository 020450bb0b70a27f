use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Mean and sample standard deviation (n - 1 denominator, 0 for one value).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} ± {:.6}", self.mean, self.std)
    }
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot summarize zero values".into()));
    }
    let n = values.len();
    if values.iter().all(|&v| v == values[0]) {
        return Ok(Summary {
            mean: values[0],
            std: 0.0,
            n,
        });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(Summary { mean, std, n })
}

/// Per-item scores of two methods on the same items, paired by index.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ScoreSample {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl ScoreSample {
    pub fn differences(&self) -> Result<Vec<f64>> {
        if self.a.len() != self.b.len() {
            return Err(Error::InvalidArgument(format!(
                "paired samples of unequal length {} and {}",
                self.a.len(),
                self.b.len()
            )));
        }
        Ok(self.a.iter().zip(&self.b).map(|(x, y)| x - y).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    /// Two-sided p-value.
    pub p: f64,
}

impl fmt::Display for TTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t = {:.4}, df = {}, p = {:.4}", self.t, self.df, self.p)
    }
}

/// Paired t-test of `a - b`.
pub fn paired_t_test(sample: &ScoreSample) -> Result<TTest> {
    t_test_differences(&sample.differences()?)
}

/// One-sample t-test of the mean difference against zero.
///
/// Returns [`Error::Degenerate`] when the differences have zero variance.
pub fn t_test_differences(d: &[f64]) -> Result<TTest> {
    if d.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "paired t-test needs at least 2 pairs, got {}",
            d.len()
        )));
    }
    let s = summarize(d)?;
    if s.std == 0.0 || !s.std.is_finite() {
        return Err(Error::Degenerate(
            "differences have zero variance; t is undefined".into(),
        ));
    }
    let n = d.len();
    let t = s.mean / (s.std / (n as f64).sqrt());
    let df = n - 1;
    let dist = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| Error::InvalidArgument(format!("student t: {e}")))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, df, p })
}
