//! Series and sample moments (divide-by-n convention).

use serde::{Deserialize, Serialize};

use crate::distributions::{tail_prob, Distribution, Sides};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A labelled, finite, non-empty sequence of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    label: String,
    values: Vec<f64>,
}

impl Series {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let label = label.into();
        if values.is_empty() {
            return Err(Error::EmptyData(format!("series `{label}` is empty")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(label));
        }
        Ok(Series { label, values })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Means, covariances and correlations of a data matrix.
///
/// `corr[i][j]` is `None` when either column has zero variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMoments {
    pub n: usize,
    pub means: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub corr: Vec<Vec<Option<f64>>>,
}

/// Sample moments of the columns of an `n × k` data matrix.
pub fn sample_moments(data: &Matrix) -> Result<SampleMoments> {
    let (n, k) = (data.rows(), data.cols());
    if n < 2 {
        return Err(Error::EmptyData(format!("need at least 2 rows, got {n}")));
    }
    let columns: Vec<Vec<f64>> = (0..k).map(|j| data.column(j)).collect();
    if columns.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("data".into()));
    }
    let means: Vec<f64> = columns.iter().map(|c| mean(c)).collect();
    let mut cov = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let c = columns[i]
                .iter()
                .zip(&columns[j])
                .map(|(a, b)| (a - means[i]) * (b - means[j]))
                .sum::<f64>()
                / n as f64;
            cov[i][j] = c;
            cov[j][i] = c;
        }
    }
    let mut corr = vec![vec![None; k]; k];
    for i in 0..k {
        for j in 0..k {
            corr[i][j] = if cov[i][i] > 0.0 && cov[j][j] > 0.0 {
                if i == j {
                    Some(1.0)
                } else {
                    Some((cov[i][j] / (cov[i][i] * cov[j][j]).sqrt()).clamp(-1.0, 1.0))
                }
            } else {
                None
            };
        }
    }
    Ok(SampleMoments { n, means, cov, corr })
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Divide-by-n variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

/// Sample correlation of two equal-length slices; `None` if either has
/// zero variance.
pub fn correlation(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "correlation of unequal-length series");
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx > 0.0 && syy > 0.0 {
        Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
    } else {
        None
    }
}

/// A correlation estimate together with its t-test of zero correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTest {
    pub rho: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Sample correlation and its two-sided t-test on `n - 2` degrees of freedom.
pub fn correlation_test(x: &[f64], y: &[f64]) -> Result<CorrelationTest> {
    if x.len() != y.len() {
        return Err(Error::InvalidDataset("series are not aligned".into()));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::EmptyData(format!("need at least 3 observations, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("correlation input".into()));
    }
    let rho = correlation(x, y).ok_or_else(|| Error::Degenerate("zero-variance series".into()))?;
    let df = (n - 2) as f64;
    let denom = 1.0 - rho * rho;
    let (t_stat, p_value) = if denom <= 0.0 {
        (f64::INFINITY.copysign(rho), 0.0)
    } else {
        let t = rho * (df / denom).sqrt();
        (t, tail_prob(Distribution::StudentT { df }, t, Sides::Two)?)
    };
    Ok(CorrelationTest { rho, t_stat, p_value, n })
}
