//! Misspecification testing of a fitted linear regression.
//!
//! Every check is an auxiliary regression or a moment test on the residuals
//! of a base fit. Each one maps onto one of the five model assumptions:
//! Normality, Linearity, Homoskedasticity, Independence and t-invariance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::distributions::{tail_prob, Distribution, Sides};
use crate::error::{Error, Result};
use crate::linalg::{least_squares, Matrix};
use crate::regression::{
    build_design, fit_design, lag_name, shift_columns, trend_column, trend_name, Dataset, Design,
    FitResult, ModelSpec, OrderingKind,
};
use crate::stats::{correlation_test, CorrelationTest, Series};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryConfig {
    pub alpha: f64,
    pub trend_degree: usize,
    pub lag_count: usize,
    pub orderings_to_test: Vec<String>,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        BatteryConfig { alpha: 0.05, trend_degree: 3, lag_count: 2, orderings_to_test: Vec::new() }
    }
}

impl BatteryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha {} not in (0, 1)", self.alpha)));
        }
        if self.trend_degree < 1 {
            return Err(Error::InvalidConfig("trend degree must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Assumption {
    Normality,
    Linearity,
    Homoskedasticity,
    Independence,
    TInvariance,
}

impl Assumption {
    pub const ALL: [Assumption; 5] = [
        Assumption::Normality,
        Assumption::Linearity,
        Assumption::Homoskedasticity,
        Assumption::Independence,
        Assumption::TInvariance,
    ];

    pub fn number(self) -> usize {
        self as usize + 1
    }

    pub fn label(self) -> &'static str {
        match self {
            Assumption::Normality => "Normality",
            Assumption::Linearity => "Linearity",
            Assumption::Homoskedasticity => "Homoskedasticity",
            Assumption::Independence => "Independence",
            Assumption::TInvariance => "t-invariance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Untested,
}

/// F-test of a subset of the added auxiliary terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermGroupTest {
    pub label: String,
    pub terms: Vec<String>,
    pub f_stat: f64,
    pub df1: usize,
    pub df2: usize,
    pub p_value: f64,
}

/// Residuals regressed on the base design plus added terms.
///
/// When the base residuals are numerically zero the result is `degenerate`,
/// `aux_fit` is `None` and the statistics are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryResult {
    pub added_terms: Vec<String>,
    pub aux_fit: Option<FitResult>,
    pub joint_f_stat: f64,
    pub joint_df: (usize, usize),
    pub joint_p: f64,
    pub per_term_p: Vec<f64>,
    pub groups: Vec<TermGroupTest>,
    pub degenerate: bool,
}

impl AuxiliaryResult {
    /// `None` when no test could be run.
    pub fn rejects(&self, alpha: f64) -> Option<bool> {
        (!self.degenerate).then_some(self.joint_p < alpha)
    }

    pub fn group(&self, label: &str) -> Option<&TermGroupTest> {
        self.groups.iter().find(|g| g.label == label)
    }

    fn degenerate(added_terms: Vec<String>) -> Self {
        AuxiliaryResult {
            added_terms,
            aux_fit: None,
            joint_f_stat: f64::NAN,
            joint_df: (0, 0),
            joint_p: f64::NAN,
            per_term_p: Vec::new(),
            groups: Vec::new(),
            degenerate: true,
        }
    }
}

struct AddedTerm {
    name: String,
    column: Vec<f64>,
    group: &'static str,
}

fn rss_of(columns: &[Vec<f64>], response: &[f64]) -> Result<f64> {
    Ok(least_squares(&Matrix::from_columns(columns)?, response)?.rss)
}

fn f_test(rss_restricted: f64, rss_full: f64, q: usize, df: usize) -> Result<(f64, f64)> {
    let num = (rss_restricted - rss_full).max(0.0) / q as f64;
    let den = rss_full / df as f64;
    let f = if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let p = if f.is_finite() {
        tail_prob(Distribution::FisherF { df1: q as f64, df2: df as f64 }, f, Sides::One)?
    } else {
        0.0
    };
    Ok((f, p))
}

/// Nested F-tests of `added` (jointly and per group) in the regression of
/// `response` on `base ∪ added`.
fn nested_test(
    label: &str,
    base_names: Vec<String>,
    base_columns: Vec<Vec<f64>>,
    added: Vec<AddedTerm>,
    response: Vec<f64>,
) -> Result<AuxiliaryResult> {
    if added.is_empty() {
        return Err(Error::InvalidConfig(format!("{label}: no terms to add to the base design")));
    }
    let n = response.len();
    let p_full = base_columns.len() + added.len();
    if n <= p_full {
        return Err(Error::Underdetermined(format!(
            "{label}: {n} rows for {p_full} auxiliary parameters"
        )));
    }
    let added_terms: Vec<String> = added.iter().map(|a| a.name.clone()).collect();
    let mut names = base_names.clone();
    let mut columns = base_columns.clone();
    for a in &added {
        names.push(a.name.clone());
        columns.push(a.column.clone());
    }
    let spec = ModelSpec {
        response: "residual".into(),
        regressors: names.iter().filter(|n| *n != "const").cloned().collect(),
        include_intercept: names.iter().any(|n| n == "const"),
        generic_terms: Vec::new(),
    };
    let aux_fit = fit_design(spec, Design { names, columns, response: response.clone(), first_row: 0 })?;
    let df = aux_fit.df_resid;
    let rss_full = aux_fit.rss;

    let rss_base = if base_columns.is_empty() {
        response.iter().map(|u| u * u).sum()
    } else {
        rss_of(&base_columns, &response)?
    };
    let (joint_f_stat, joint_p) = f_test(rss_base, rss_full, added.len(), df)?;

    let mut group_labels: Vec<&'static str> = added.iter().map(|a| a.group).collect();
    group_labels.dedup();
    let mut groups = Vec::new();
    if group_labels.len() > 1 {
        for g in group_labels {
            let mut restricted = base_columns.clone();
            restricted.extend(added.iter().filter(|a| a.group != g).map(|a| a.column.clone()));
            let q = added.iter().filter(|a| a.group == g).count();
            let (f, p) = f_test(rss_of(&restricted, &response)?, rss_full, q, df)?;
            groups.push(TermGroupTest {
                label: g.to_string(),
                terms: added.iter().filter(|a| a.group == g).map(|a| a.name.clone()).collect(),
                f_stat: f,
                df1: q,
                df2: df,
                p_value: p,
            });
        }
    } else {
        groups.push(TermGroupTest {
            label: group_labels[0].to_string(),
            terms: added_terms.clone(),
            f_stat: joint_f_stat,
            df1: added.len(),
            df2: df,
            p_value: joint_p,
        });
    }
    let per_term_p = aux_fit.p_values[base_columns.len()..].to_vec();
    Ok(AuxiliaryResult {
        added_terms,
        aux_fit: Some(aux_fit),
        joint_f_stat,
        joint_df: (added.len(), df),
        joint_p,
        per_term_p,
        groups,
        degenerate: false,
    })
}

/// Base design rebuilt on `data`, checked against the fit's residuals.
fn base_design(data: &Dataset, base: &FitResult) -> Result<Design> {
    let design = build_design(data, &base.spec)?;
    if design.response.len() != base.residuals.len() || design.first_row != base.first_row {
        return Err(Error::MismatchedInputs("base fit was not estimated on this dataset".into()));
    }
    Ok(design)
}

/// Restricts a base design to dataset rows `first..n`.
fn restrict(design: &Design, first: usize) -> Vec<Vec<f64>> {
    let skip = first - design.first_row;
    design.columns.iter().map(|c| c[skip..].to_vec()).collect()
}

/// Residuals of `base` regressed on the base design plus trend powers
/// `t, …, t^(degree−1)` (at least `t`) and lags `1..=lag_count` of the
/// response and each regressor. Groups `trend` and `lags` are also tested
/// separately.
pub fn auxiliary_trend_lag_test(data: &Dataset, base: &FitResult, cfg: &BatteryConfig) -> Result<AuxiliaryResult> {
    cfg.validate()?;
    let design = base_design(data, base)?;
    let n = data.n();
    // Terms already in the base model are replaced by the next unused power
    // or lag.
    let unused = |name: &dyn Fn(usize) -> String, count: usize| -> Vec<usize> {
        (1..).filter(|k| !design.names.contains(&name(*k))).take(count).collect()
    };
    let powers = unused(&trend_name, cfg.trend_degree.saturating_sub(1).max(1));
    let lagged: Vec<&String> = std::iter::once(&base.spec.response).chain(&base.spec.regressors).collect();
    let lags: Vec<(&String, Vec<usize>)> =
        lagged.iter().map(|v| (*v, unused(&|l| lag_name(v, l), cfg.lag_count))).collect();
    let max_lag = lags.iter().flat_map(|(_, l)| l.iter().copied()).max().unwrap_or(0);
    let first = design.first_row.max(max_lag);
    if first + 2 >= n {
        return Err(Error::Underdetermined(format!("{max_lag} lags leave too few of {n} rows")));
    }
    let rows = first..n;

    let mut added = Vec::new();
    for k in powers {
        added.push(AddedTerm { name: trend_name(k), column: trend_column(n, rows.clone(), k), group: "trend" });
    }
    for lag in 1..=max_lag {
        for (var, var_lags) in &lags {
            if var_lags.contains(&lag) {
                let source = data.column(var)?;
                added.push(AddedTerm {
                    name: lag_name(var, lag),
                    column: rows.clone().map(|r| source[r - lag]).collect(),
                    group: "lags",
                });
            }
        }
    }
    let added_names = added.iter().map(|a| a.name.clone()).collect();
    if base.degenerate {
        return Ok(AuxiliaryResult::degenerate(added_names));
    }
    let resid = base.residuals[first - base.first_row..].to_vec();
    nested_test("trend/lag test", design.names.clone(), restrict(&design, first), added, resid)
}

/// Residuals of `base` regressed on the base design plus level dummies of a
/// binary or categorical ordering.
pub fn ordering_shift_test(data: &Dataset, base: &FitResult, ordering: &str) -> Result<AuxiliaryResult> {
    let ord = data.ordering(ordering)?;
    if !matches!(ord.kind(), OrderingKind::BinaryGroup | OrderingKind::Categorical) {
        return Err(Error::InvalidSpec(format!(
            "shift test needs a binary or categorical ordering; `{ordering}` is {:?}",
            ord.kind()
        )));
    }
    let design = base_design(data, base)?;
    let rows = design.first_row..data.n();
    let mut added: Vec<AddedTerm> = shift_columns(ord, rows)
        .into_iter()
        .map(|(name, column)| AddedTerm { name, column, group: "shift" })
        .collect();
    added.retain(|a| !design.names.contains(&a.name) && a.column.iter().any(|&v| v != a.column[0]));
    if added.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "ordering `{ordering}` has a single level in the fitted rows"
        )));
    }
    let added_names = added.iter().map(|a| a.name.clone()).collect();
    if base.degenerate {
        return Ok(AuxiliaryResult::degenerate(added_names));
    }
    nested_test("shift test", design.names.clone(), design.columns.clone(), added, base.residuals.clone())
}

/// Residuals of `base` regressed on the base design plus squares of its
/// non-constant, non-binary columns (a RESET-style check of linearity).
pub fn linearity_check(data: &Dataset, base: &FitResult) -> Result<AuxiliaryResult> {
    let design = base_design(data, base)?;
    let added: Vec<AddedTerm> = squared_columns(&design)
        .into_iter()
        .map(|(name, column)| AddedTerm { name, column, group: "squares" })
        .collect();
    if added.is_empty() {
        return Err(Error::InvalidSpec("no regressors to square".into()));
    }
    let added_names = added.iter().map(|a| a.name.clone()).collect();
    if base.degenerate {
        return Ok(AuxiliaryResult::degenerate(added_names));
    }
    nested_test("linearity check", design.names.clone(), design.columns.clone(), added, base.residuals.clone())
}

fn squared_columns(design: &Design) -> Vec<(String, Vec<f64>)> {
    design
        .names
        .iter()
        .zip(&design.columns)
        .filter(|(name, col)| *name != "const" && col.iter().any(|&v| v * v != v))
        .map(|(name, col)| (format!("{name}^2"), col.iter().map(|v| v * v).collect()))
        .filter(|(name, _)| !design.names.contains(name))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityResult {
    pub skewness: f64,
    pub kurtosis: f64,
    /// D'Agostino–Pearson omnibus statistic, χ²(2) under Normality.
    pub stat: f64,
    pub p_value: f64,
    pub pass: bool,
}

/// Skewness/kurtosis omnibus test of Normality.
pub fn normality_check(residuals: &[f64], alpha: f64) -> Result<NormalityResult> {
    let n = residuals.len();
    if n < 8 {
        return Err(Error::TooFewResiduals { needed: 8, got: n });
    }
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("residuals".into()));
    }
    let nf = n as f64;
    let mean = residuals.iter().sum::<f64>() / nf;
    let moment = |k: i32| residuals.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / nf;
    let m2 = moment(2);
    let scale = residuals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if m2 <= (1e-12 * scale).powi(2) || scale == 0.0 {
        return Err(Error::Degenerate("residuals have zero variance".into()));
    }
    let skewness = moment(3) / m2.powf(1.5);
    let kurtosis = moment(4) / (m2 * m2);

    // Skewness z (D'Agostino 1970).
    let y = skewness * ((nf + 1.0) * (nf + 3.0) / (6.0 * (nf - 2.0))).sqrt();
    let beta2 = 3.0 * (nf * nf + 27.0 * nf - 70.0) * (nf + 1.0) * (nf + 3.0)
        / ((nf - 2.0) * (nf + 5.0) * (nf + 7.0) * (nf + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let a = (2.0 / (w2 - 1.0)).sqrt();
    let y = if y == 0.0 { 1.0 } else { y };
    let z_skew = delta * (y / a + ((y / a).powi(2) + 1.0).sqrt()).ln();

    // Kurtosis z (Anscombe & Glynn 1983).
    let e = 3.0 * (nf - 1.0) / (nf + 1.0);
    let var_b2 = 24.0 * nf * (nf - 2.0) * (nf - 3.0) / ((nf + 1.0).powi(2) * (nf + 3.0) * (nf + 5.0));
    let x = (kurtosis - e) / var_b2.sqrt();
    let sqrt_beta1 = 6.0 * (nf * nf - 5.0 * nf + 2.0) / ((nf + 7.0) * (nf + 9.0))
        * (6.0 * (nf + 3.0) * (nf + 5.0) / (nf * (nf - 2.0) * (nf - 3.0))).sqrt();
    let big_a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + (1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * big_a);
    let denom = 1.0 + x * (2.0 / (big_a - 4.0)).sqrt();
    let term2 = denom.signum() * ((1.0 - 2.0 / big_a) / denom.abs()).cbrt();
    let z_kurt = (term1 - term2) / (2.0 / (9.0 * big_a)).sqrt();

    let stat = z_skew * z_skew + z_kurt * z_kurt;
    let p_value = tail_prob(Distribution::ChiSquare { df: 2.0 }, stat, Sides::One)?;
    Ok(NormalityResult { skewness, kurtosis, stat, p_value, pass: p_value >= alpha })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HomoskedasticityMethod {
    /// Variance-ratio F-test (two groups) or Bartlett's test (more groups).
    Grouped,
    /// Squared residuals regressed on the regressors and their squares.
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomoskedasticityResult {
    pub method: HomoskedasticityMethod,
    pub stat: f64,
    pub p_value: f64,
    pub pass: bool,
}

/// Equal-variance check of the residuals of `base`, across the groups of
/// `ordering` when one is given (and has more than one level), otherwise by
/// auxiliary regression of the squared residuals.
pub fn homoskedasticity_check(
    data: &Dataset,
    base: &FitResult,
    ordering: Option<&str>,
    alpha: f64,
) -> Result<HomoskedasticityResult> {
    let design = base_design(data, base)?;
    if base.degenerate {
        return Err(Error::Degenerate("residuals are numerically zero".into()));
    }
    if let Some(name) = ordering {
        let ord = data.ordering(name)?;
        let values = &ord.values()[design.first_row..];
        let levels = {
            let mut l = values.to_vec();
            l.sort_by(f64::total_cmp);
            l.dedup();
            l
        };
        if levels.len() > 1 {
            let groups: Vec<Vec<f64>> = levels
                .iter()
                .map(|lv| {
                    values.iter().zip(&base.residuals).filter(|(v, _)| *v == lv).map(|(_, u)| *u).collect()
                })
                .collect();
            return grouped_variance_test(&groups, alpha);
        }
    }

    let p = design.columns.len();
    let n = base.residuals.len();
    if n < p + 3 {
        return Err(Error::GroupTooSmall(format!("{n} rows; need at least {}", p + 3)));
    }
    let mut columns = design.columns.clone();
    columns.extend(squared_columns(&design).into_iter().map(|(_, c)| c));
    if !design.names.iter().any(|n| n == "const") {
        columns.insert(0, vec![1.0; n]);
    }
    let slopes = columns.len() - 1;
    if slopes == 0 {
        return Err(Error::InvalidSpec("no regressors for the squared-residual regression".into()));
    }
    if n <= columns.len() {
        return Err(Error::Underdetermined(format!("{n} rows for {} parameters", columns.len())));
    }
    let u2: Vec<f64> = base.residuals.iter().map(|u| u * u).collect();
    let rss_full = rss_of(&columns, &u2)?;
    let m = u2.iter().sum::<f64>() / n as f64;
    let tss: f64 = u2.iter().map(|v| (v - m).powi(2)).sum();
    let (stat, p_value) = f_test(tss, rss_full, slopes, n - columns.len())?;
    Ok(HomoskedasticityResult {
        method: HomoskedasticityMethod::Regression,
        stat,
        p_value,
        pass: p_value >= alpha,
    })
}

fn grouped_variance_test(groups: &[Vec<f64>], alpha: f64) -> Result<HomoskedasticityResult> {
    if let Some(small) = groups.iter().find(|g| g.len() < 3) {
        return Err(Error::GroupTooSmall(format!("a group has {} rows; need at least 3", small.len())));
    }
    let var = |g: &[f64]| {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        g.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (g.len() - 1) as f64
    };
    let variances: Vec<f64> = groups.iter().map(|g| var(g)).collect();
    if variances.iter().any(|&v| v <= 0.0) {
        return Err(Error::Degenerate("a group has zero residual variance".into()));
    }
    let (stat, p_value) = if groups.len() == 2 {
        let f = variances[0] / variances[1];
        let dist = Distribution::FisherF {
            df1: (groups[0].len() - 1) as f64,
            df2: (groups[1].len() - 1) as f64,
        };
        (f, tail_prob(dist, f, Sides::Two)?)
    } else {
        // Bartlett's test.
        let k = groups.len() as f64;
        let dfs: Vec<f64> = groups.iter().map(|g| (g.len() - 1) as f64).collect();
        let df_total: f64 = dfs.iter().sum();
        let pooled = dfs.iter().zip(&variances).map(|(d, v)| d * v).sum::<f64>() / df_total;
        let num = df_total * pooled.ln() - dfs.iter().zip(&variances).map(|(d, v)| d * v.ln()).sum::<f64>();
        let corr = 1.0 + (dfs.iter().map(|d| 1.0 / d).sum::<f64>() - 1.0 / df_total) / (3.0 * (k - 1.0));
        let stat = num / corr;
        (stat, tail_prob(Distribution::ChiSquare { df: k - 1.0 }, stat, Sides::One)?)
    };
    Ok(HomoskedasticityResult {
        method: HomoskedasticityMethod::Grouped,
        stat,
        p_value,
        pass: p_value >= alpha,
    })
}

/// Residuals of `series` on `1, τ, …, τ^degree` with `τ = t/n`.
pub fn detrend(series: &Series, degree: usize) -> Result<Series> {
    let n = series.len();
    if n <= degree + 1 {
        return Err(Error::Underdetermined(format!(
            "detrending {n} values with a degree-{degree} polynomial"
        )));
    }
    let mut columns = vec![vec![1.0; n]];
    for k in 1..=degree {
        columns.push(trend_column(n, 0..n, k));
    }
    let sol = least_squares(&Matrix::from_columns(&columns)?, series.values())?;
    Series::new(format!("{} (detrended)", series.label()), sol.residuals)
}

/// Residuals of `series` on an intercept and its own first `lags` lags; the
/// first `lags` observations are dropped.
pub fn dememorize(series: &Series, lags: usize) -> Result<Series> {
    let n = series.len();
    if n <= lags + 2 {
        return Err(Error::Underdetermined(format!("{n} values for {lags} lags")));
    }
    let v = series.values();
    let m = v.iter().sum::<f64>() / n as f64;
    let scale = v.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    if v.iter().all(|x| (x - m).abs() <= 1e-12 * scale) {
        return Err(Error::Underdetermined(format!("series `{}` has zero variance", series.label())));
    }
    let rows = lags..n;
    let mut columns = vec![vec![1.0; rows.len()]];
    for lag in 1..=lags {
        columns.push(rows.clone().map(|r| v[r - lag]).collect());
    }
    let sol = least_squares(&Matrix::from_columns(&columns)?, &v[lags..])?;
    Series::new(format!("{} (dememorized)", series.label()), sol.residuals)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectedCorrelation {
    pub naive: CorrelationTest,
    pub corrected: CorrelationTest,
}

impl CorrectedCorrelation {
    pub fn rho(&self) -> f64 {
        self.corrected.rho
    }

    pub fn p_value(&self) -> f64 {
        self.corrected.p_value
    }

    pub fn n_effective(&self) -> usize {
        self.corrected.n
    }
}

/// Correlation of `x` and `y` after removing a polynomial trend and then
/// `lag_count` lags of own dependence from each.
pub fn corrected_correlation(x: &Series, y: &Series, cfg: &BatteryConfig) -> Result<CorrectedCorrelation> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(Error::InvalidDataset("series are not aligned".into()));
    }
    let n = x.len();
    if n <= cfg.trend_degree + cfg.lag_count + 3 {
        return Err(Error::Underdetermined(format!(
            "{n} observations for degree {} and {} lags",
            cfg.trend_degree, cfg.lag_count
        )));
    }
    let naive = correlation_test(x.values(), y.values())?;
    let xc = dememorize(&detrend(x, cfg.trend_degree)?, cfg.lag_count)?;
    let yc = dememorize(&detrend(y, cfg.trend_degree)?, cfg.lag_count)?;
    let corrected = correlation_test(xc.values(), yc.values())?;
    Ok(CorrectedCorrelation { naive, corrected })
}

/// Outcome of one executed (or skipped) check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub assumption: Assumption,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub status: Status,
    pub note: Option<String>,
}

impl CheckResult {
    fn from_p(name: String, assumption: Assumption, stat: f64, p: f64, alpha: f64) -> Self {
        CheckResult {
            name,
            assumption,
            statistic: stat.is_finite().then_some(stat),
            p_value: Some(p),
            status: if p < alpha { Status::Fail } else { Status::Pass },
            note: None,
        }
    }

    fn untested(name: String, assumption: Assumption, note: String) -> Self {
        CheckResult { name, assumption, statistic: None, p_value: None, status: Status::Untested, note: Some(note) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MisspecReport {
    pub per_assumption: BTreeMap<Assumption, Status>,
    pub checks: Vec<CheckResult>,
    pub evidence: Vec<AuxiliaryResult>,
    pub overall_adequate: bool,
}

impl MisspecReport {
    /// Assembles the per-assumption verdicts: fail if any check failed,
    /// untested if any check could not run, pass otherwise.
    pub fn from_checks(checks: Vec<CheckResult>, evidence: Vec<AuxiliaryResult>) -> Self {
        let per_assumption: BTreeMap<Assumption, Status> = Assumption::ALL
            .iter()
            .map(|&a| {
                let mine: Vec<Status> = checks.iter().filter(|c| c.assumption == a).map(|c| c.status).collect();
                let status = if mine.contains(&Status::Fail) {
                    Status::Fail
                } else if mine.is_empty() || mine.contains(&Status::Untested) {
                    Status::Untested
                } else {
                    Status::Pass
                };
                (a, status)
            })
            .collect();
        let overall_adequate = !per_assumption.values().any(|s| *s == Status::Fail);
        MisspecReport { per_assumption, checks, evidence, overall_adequate }
    }

    pub fn failed(&self) -> Vec<Assumption> {
        self.per_assumption.iter().filter(|(_, s)| **s == Status::Fail).map(|(a, _)| *a).collect()
    }
}

fn soft<T>(result: Result<T>) -> Result<std::result::Result<T, String>> {
    match result {
        Ok(v) => Ok(Ok(v)),
        Err(
            e @ (Error::Degenerate(_)
            | Error::Underdetermined(_)
            | Error::GroupTooSmall(_)
            | Error::RankDeficient { .. }
            | Error::TooFewResiduals { .. }
            | Error::InvalidDataset(_)
            | Error::InvalidSpec(_)),
        ) => Ok(Err(e.to_string())),
        Err(e) => Err(e),
    }
}

fn aux_checks(
    checks: &mut Vec<CheckResult>,
    evidence: &mut Vec<AuxiliaryResult>,
    result: std::result::Result<AuxiliaryResult, String>,
    mapping: &[(&str, Assumption, String)],
    alpha: f64,
) {
    match result {
        Ok(aux) if !aux.degenerate => {
            for (group, assumption, name) in mapping {
                if let Some(g) = aux.group(group) {
                    checks.push(CheckResult::from_p(name.clone(), *assumption, g.f_stat, g.p_value, alpha));
                } else {
                    checks.push(CheckResult::untested(name.clone(), *assumption, format!("no {group} terms")));
                }
            }
            evidence.push(aux);
        }
        Ok(aux) => {
            for (_, assumption, name) in mapping {
                checks.push(CheckResult::untested(name.clone(), *assumption, "degenerate residuals".into()));
            }
            evidence.push(aux);
        }
        Err(note) => {
            for (_, assumption, name) in mapping {
                checks.push(CheckResult::untested(name.clone(), *assumption, note.clone()));
            }
        }
    }
}

/// Runs every applicable check on `base` and collects the verdicts.
///
/// The trend/lag test runs along the dataset's time ordering when it has
/// one; shift and grouped-variance checks run for each configured binary or
/// categorical ordering.
pub fn run_battery(data: &Dataset, base: &FitResult, cfg: &BatteryConfig) -> Result<MisspecReport> {
    cfg.validate()?;
    base_design(data, base)?;
    let alpha = cfg.alpha;
    let mut checks = Vec::new();
    let mut evidence = Vec::new();

    let name = "normality (skewness-kurtosis)".to_string();
    let normality = if base.degenerate {
        Err(Error::Degenerate("residuals are numerically zero".into()))
    } else {
        normality_check(&base.residuals, alpha)
    };
    checks.push(match soft(normality)? {
        Ok(r) => CheckResult::from_p(name, Assumption::Normality, r.stat, r.p_value, alpha),
        Err(note) => CheckResult::untested(name, Assumption::Normality, note),
    });

    aux_checks(
        &mut checks,
        &mut evidence,
        soft(linearity_check(data, base))?,
        &[("squares", Assumption::Linearity, "linearity (squared regressors)".into())],
        alpha,
    );

    let name = "homoskedasticity (squared-residual regression)".to_string();
    checks.push(match soft(homoskedasticity_check(data, base, None, alpha))? {
        Ok(r) => CheckResult::from_p(name, Assumption::Homoskedasticity, r.stat, r.p_value, alpha),
        Err(note) => CheckResult::untested(name, Assumption::Homoskedasticity, note),
    });

    match data.time_ordering() {
        Some(time) => {
            let t = time.name().to_string();
            aux_checks(
                &mut checks,
                &mut evidence,
                soft(auxiliary_trend_lag_test(data, base, cfg))?,
                &[
                    ("lags", Assumption::Independence, format!("independence (lags along {t})")),
                    ("trend", Assumption::TInvariance, format!("t-invariance (trend along {t})")),
                ],
                alpha,
            );
        }
        None => {
            let note = "no time ordering declared".to_string();
            checks.push(CheckResult::untested("independence (lags)".into(), Assumption::Independence, note.clone()));
            checks.push(CheckResult::untested("t-invariance (trend)".into(), Assumption::TInvariance, note));
        }
    }

    for ordering in &cfg.orderings_to_test {
        let ord = data.ordering(ordering)?;
        match ord.kind() {
            OrderingKind::BinaryGroup | OrderingKind::Categorical => {
                aux_checks(
                    &mut checks,
                    &mut evidence,
                    soft(ordering_shift_test(data, base, ordering))?,
                    &[("shift", Assumption::TInvariance, format!("t-invariance (shift across {ordering})"))],
                    alpha,
                );
                let name = format!("homoskedasticity (variance ratio across {ordering})");
                checks.push(match soft(homoskedasticity_check(data, base, Some(ordering), alpha))? {
                    Ok(r) if r.method == HomoskedasticityMethod::Grouped => {
                        CheckResult::from_p(name, Assumption::Homoskedasticity, r.stat, r.p_value, alpha)
                    }
                    Ok(_) => CheckResult::untested(name, Assumption::Homoskedasticity, "single group".into()),
                    Err(note) => CheckResult::untested(name, Assumption::Homoskedasticity, note),
                });
            }
            // Time orderings are covered by the trend/lag test above.
            OrderingKind::Time => {}
            OrderingKind::Numeric => {
                checks.push(CheckResult::untested(
                    format!("t-invariance (along {ordering})"),
                    Assumption::TInvariance,
                    "numeric orderings are not tested".into(),
                ));
            }
        }
    }

    Ok(MisspecReport::from_checks(checks, evidence))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::{fit, OrderingVariable};

    #[test]
    fn normality_matches_reference() {
        let r: Vec<f64> = (0..30)
            .map(|i| ((i * 7919) % 101) as f64 / 10.0 + if i % 5 == 0 { 6.0 } else { 0.0 })
            .collect();
        let out = normality_check(&r, 0.05).unwrap();
        assert!((out.stat - 2.357163358883186).abs() < 1e-9);
        assert!((out.p_value - 0.30771486756547767).abs() < 1e-9);
        let heavy = [
            2.836, -0.714, -0.374, -0.433, -1.356, -0.188, 0.016, -0.595, 2.362, 1.621, 0.784, 1.125, 0.236,
            -1.167, 1.182, 1.322, 0.519, -0.787, 0.632, 0.103, -3.338, 4.299, 0.464, -1.144, 1.553,
        ];
        let out = normality_check(&heavy, 0.05).unwrap();
        assert!((out.stat - 2.5146991182519907).abs() < 1e-9);
        assert!((out.p_value - 0.2844068319181123).abs() < 1e-9);
        assert!(out.pass);
    }

    #[test]
    fn normality_boundary() {
        assert_eq!(
            normality_check(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0], 0.05),
            Err(Error::TooFewResiduals { needed: 8, got: 7 })
        );
        assert!(matches!(normality_check(&[2.0; 12], 0.05), Err(Error::Degenerate(_))));
    }

    #[test]
    fn detrend_removes_cubic_exactly() {
        let n = 40;
        let v: Vec<f64> = (1..=n).map(|t| {
            let x = t as f64;
            3.0 - 0.2 * x + 0.05 * x * x - 0.001 * x * x * x
        }).collect();
        let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let d = detrend(&Series::new("c", v).unwrap(), 3).unwrap();
        assert!(d.values().iter().all(|r| r.abs() <= 1e-8 * scale));
        assert!(matches!(detrend(&Series::new("s", vec![1.0, 2.0, 3.0, 5.0]).unwrap(), 3), Err(Error::Underdetermined(_))));
    }

    #[test]
    fn detrend_is_idempotent() {
        let v: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() * 3.0 + i as f64 * 0.1).collect();
        let once = detrend(&Series::new("x", v).unwrap(), 3).unwrap();
        let twice = detrend(&once, 3).unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            assert!((a - b).abs() < 1e-10);
        }
        let mean = once.values().iter().sum::<f64>() / once.len() as f64;
        assert!(mean.abs() < 1e-10);
    }

    #[test]
    fn dememorize_drops_rows_and_rejects_constants() {
        let v: Vec<f64> = (0..20).map(|i| (i as f64 * 1.3).cos()).collect();
        let d = dememorize(&Series::new("x", v).unwrap(), 2).unwrap();
        assert_eq!(d.len(), 18);
        assert!(matches!(dememorize(&Series::new("k", vec![4.0; 10]).unwrap(), 2), Err(Error::Underdetermined(_))));
        assert!(matches!(dememorize(&Series::new("s", vec![1.0, 2.0, 4.0, 3.0]).unwrap(), 2), Err(Error::Underdetermined(_))));
    }

    #[test]
    fn corrected_correlation_of_identical_series_is_one() {
        let v: Vec<f64> = (0..46).map(|i| (i as f64 * 0.9).sin() + 0.01 * (i * i) as f64).collect();
        let s = Series::new("x", v).unwrap();
        let c = corrected_correlation(&s, &s, &BatteryConfig::default()).unwrap();
        assert!((c.rho() - 1.0).abs() < 1e-12);
        assert_eq!(c.n_effective(), 44);
    }

    fn grouped_dataset() -> Dataset {
        // Two groups with a clear intercept shift and common slope.
        let n = 40;
        let x: Vec<f64> = (0..n).map(|i| (i % 20) as f64 + 0.3 * ((i * 13) % 7) as f64).collect();
        let g: Vec<f64> = (0..n).map(|i| if i < 20 { 1.0 } else { 0.0 }).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 2.0 + 0.5 * x[i] + 8.0 * g[i] + 0.4 * (((i * 31) % 11) as f64 - 5.0))
            .collect();
        Dataset::new(
            vec![Series::new("x", x).unwrap(), Series::new("y", y).unwrap()],
            vec![OrderingVariable::new("g", OrderingKind::BinaryGroup, g).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn shift_test_detects_group_effect() {
        let d = grouped_dataset();
        let base = fit(&d, &ModelSpec::new("y", ["x"])).unwrap();
        let aux = ordering_shift_test(&d, &base, "g").unwrap();
        assert_eq!(aux.added_terms, vec!["g"]);
        assert!(aux.joint_p < 1e-6);
        // One added term: F equals the squared t-ratio.
        let t = aux.aux_fit.as_ref().unwrap().t_ratios[2];
        assert!((aux.joint_f_stat - t * t).abs() < 1e-8 * aux.joint_f_stat);
        let mut cfg = BatteryConfig::default();
        cfg.orderings_to_test.push("g".into());
        let report = run_battery(&d, &base, &cfg).unwrap();
        assert_eq!(report.per_assumption[&Assumption::TInvariance], Status::Fail);
        assert!(!report.overall_adequate);
        assert_eq!(report.per_assumption[&Assumption::Independence], Status::Untested);
    }

    #[test]
    fn shift_test_errors() {
        let d = grouped_dataset();
        let base = fit(&d, &ModelSpec::new("y", ["x"])).unwrap();
        assert!(matches!(ordering_shift_test(&d, &base, "nope"), Err(Error::UnknownOrdering(_))));
    }

    #[test]
    fn degenerate_residuals_are_flagged() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 2.0 * v).collect();
        let g: Vec<f64> = (0..20).map(|i| (i % 2) as f64).collect();
        let t: Vec<f64> = (0..20).map(|i| 1900.0 + i as f64).collect();
        let d = Dataset::new(
            vec![Series::new("x", x).unwrap(), Series::new("y", y).unwrap()],
            vec![
                OrderingVariable::new("g", OrderingKind::BinaryGroup, g).unwrap(),
                OrderingVariable::new("year", OrderingKind::Time, t).unwrap(),
            ],
        )
        .unwrap();
        let base = fit(&d, &ModelSpec::new("y", ["x"])).unwrap();
        assert!(base.degenerate);
        let aux = auxiliary_trend_lag_test(&d, &base, &BatteryConfig::default()).unwrap();
        assert!(aux.degenerate && aux.rejects(0.05).is_none());
        assert!(ordering_shift_test(&d, &base, "g").unwrap().degenerate);
        let mut cfg = BatteryConfig::default();
        cfg.orderings_to_test.push("g".into());
        let report = run_battery(&d, &base, &cfg).unwrap();
        assert!(report.checks.iter().all(|c| c.status == Status::Untested));
        assert!(report.per_assumption.values().all(|s| *s == Status::Untested));
    }

    #[test]
    fn grouped_variance_ratio() {
        let a: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..10).map(|i| 2.0 * i as f64).collect();
        let r = grouped_variance_test(&[a.clone(), b], 0.05).unwrap();
        assert!((r.stat - 0.25).abs() < 1e-12);
        assert!(matches!(grouped_variance_test(&[a, vec![1.0, 2.0]], 0.05), Err(Error::GroupTooSmall(_))));
    }
}
