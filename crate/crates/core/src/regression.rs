//! Linear regression with coefficient inference in the familiar
//! "estimate (standard error) [p-value]" layout.

use serde::{Deserialize, Serialize};

use crate::distributions::{tail_prob, Distribution, Sides};
use crate::error::{Error, Result};
use crate::linalg::{least_squares, Matrix};
use crate::stats::Series;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingKind {
    Time,
    BinaryGroup,
    Categorical,
    Numeric,
}

impl std::str::FromStr for OrderingKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(OrderingKind::Time),
            "binary" | "binary_group" => Ok(OrderingKind::BinaryGroup),
            "categorical" => Ok(OrderingKind::Categorical),
            "numeric" => Ok(OrderingKind::Numeric),
            other => Err(Error::InvalidSpec(format!("unknown ordering kind `{other}`"))),
        }
    }
}

/// A deterministic arrangement of the observations (time, a group label, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingVariable {
    name: String,
    kind: OrderingKind,
    values: Vec<f64>,
}

impl OrderingVariable {
    pub fn new(name: impl Into<String>, kind: OrderingKind, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(name));
        }
        match kind {
            OrderingKind::Time if values.windows(2).any(|w| w[1] <= w[0]) => {
                return Err(Error::InvalidDataset(format!(
                    "time ordering `{name}` is not strictly increasing"
                )));
            }
            OrderingKind::BinaryGroup if values.iter().any(|&v| v != 0.0 && v != 1.0) => {
                return Err(Error::InvalidDataset(format!(
                    "binary ordering `{name}` has values outside {{0, 1}}"
                )));
            }
            _ => {}
        }
        Ok(OrderingVariable { name, kind, values })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> OrderingKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Distinct values in ascending order.
    pub fn levels(&self) -> Vec<f64> {
        let mut levels = self.values.clone();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        levels
    }
}

/// Named columns of equal length plus the orderings declared over them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    n: usize,
    columns: Vec<Series>,
    orderings: Vec<OrderingVariable>,
}

impl Dataset {
    pub fn new(columns: Vec<Series>, orderings: Vec<OrderingVariable>) -> Result<Self> {
        let n = columns
            .first()
            .map(Series::len)
            .or_else(|| orderings.first().map(|o| o.values.len()))
            .ok_or_else(|| Error::EmptyData("dataset has no columns".into()))?;
        if let Some(bad) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::InvalidDataset(format!(
                "column `{}` has {} rows, expected {n}",
                bad.label(),
                bad.len()
            )));
        }
        if let Some(bad) = orderings.iter().find(|o| o.values.len() != n) {
            return Err(Error::InvalidDataset(format!(
                "ordering `{}` has {} rows, expected {n}",
                bad.name,
                bad.values.len()
            )));
        }
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].iter().any(|d| d.label() == c.label()) {
                return Err(Error::InvalidDataset(format!("duplicate column `{}`", c.label())));
            }
        }
        for (i, o) in orderings.iter().enumerate() {
            if orderings[..i].iter().any(|d| d.name == o.name) {
                return Err(Error::InvalidDataset(format!("duplicate ordering `{}`", o.name)));
            }
        }
        Ok(Dataset { n, columns, orderings })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn columns(&self) -> &[Series] {
        &self.columns
    }

    pub fn orderings(&self) -> &[OrderingVariable] {
        &self.orderings
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .iter()
            .find(|c| c.label() == name)
            .map(Series::values)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn ordering(&self, name: &str) -> Result<&OrderingVariable> {
        self.orderings
            .iter()
            .find(|o| o.name == name)
            .ok_or_else(|| Error::UnknownOrdering(name.to_string()))
    }

    pub fn time_ordering(&self) -> Option<&OrderingVariable> {
        self.orderings.iter().find(|o| o.kind == OrderingKind::Time)
    }

    /// Keeps the rows where `mask` is true.
    pub fn filter_rows(&self, mask: &[bool]) -> Result<Dataset> {
        if mask.len() != self.n {
            return Err(Error::InvalidDataset("row mask length mismatch".into()));
        }
        let pick = |v: &[f64]| -> Vec<f64> {
            v.iter().zip(mask).filter(|(_, &m)| m).map(|(x, _)| *x).collect()
        };
        let columns = self
            .columns
            .iter()
            .map(|c| Series::new(c.label(), pick(c.values())))
            .collect::<Result<Vec<_>>>()?;
        let orderings = self
            .orderings
            .iter()
            .map(|o| OrderingVariable::new(o.name.clone(), o.kind, pick(&o.values)))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(columns, orderings)
    }
}

/// Generic terms that absorb heterogeneity or dependence along an ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenericTerm {
    /// `τ, τ², …, τ^degree` with `τ = t/n`, `t = 1..n` the row position.
    TrendPoly { degree: usize },
    /// `of(t−1), …, of(t−count)`; the first `count` rows are dropped.
    Lags { count: usize, of: String },
    /// Level dummies of an ordering (a single 0/1 column for binary groups).
    Shift { ordering: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub regressors: Vec<String>,
    pub include_intercept: bool,
    pub generic_terms: Vec<GenericTerm>,
}

impl ModelSpec {
    pub fn new<S: Into<String>>(response: impl Into<String>, regressors: impl IntoIterator<Item = S>) -> Self {
        ModelSpec {
            response: response.into(),
            regressors: regressors.into_iter().map(Into::into).collect(),
            include_intercept: true,
            generic_terms: Vec::new(),
        }
    }

    pub fn with_term(mut self, term: GenericTerm) -> Self {
        self.generic_terms.push(term);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.regressors.contains(&self.response) {
            return Err(Error::InvalidSpec(format!(
                "response `{}` is also a regressor",
                self.response
            )));
        }
        for (i, r) in self.regressors.iter().enumerate() {
            if self.regressors[..i].contains(r) {
                return Err(Error::InvalidSpec(format!("regressor `{r}` listed twice")));
            }
        }
        for term in &self.generic_terms {
            match term {
                GenericTerm::TrendPoly { degree: 0 } => {
                    return Err(Error::InvalidSpec("trend degree must be >= 1".into()))
                }
                GenericTerm::Lags { count: 0, .. } => {
                    return Err(Error::InvalidSpec("lag count must be >= 1".into()))
                }
                _ => {}
            }
        }
        if !self.include_intercept && self.regressors.is_empty() && self.generic_terms.is_empty() {
            return Err(Error::InvalidSpec("model has no terms".into()));
        }
        Ok(())
    }

    fn max_lag(&self) -> usize {
        self.generic_terms
            .iter()
            .map(|t| match t {
                GenericTerm::Lags { count, .. } => *count,
                _ => 0,
            })
            .max()
            .unwrap_or(0)
    }
}

/// A design matrix stored column-wise over rows `first_row..n` of a dataset.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub response: Vec<f64>,
    pub first_row: usize,
}

impl Design {
    pub fn push(&mut self, name: String, column: Vec<f64>) {
        self.names.push(name);
        self.columns.push(column);
    }
}

pub(crate) fn trend_name(power: usize) -> String {
    if power == 1 {
        "t".to_string()
    } else {
        format!("t^{power}")
    }
}

/// `((r+1)/n)^power` for each row `r` in `rows`.
pub(crate) fn trend_column(n: usize, rows: std::ops::Range<usize>, power: usize) -> Vec<f64> {
    rows.map(|r| ((r + 1) as f64 / n as f64).powi(power as i32)).collect()
}

pub(crate) fn lag_name(of: &str, lag: usize) -> String {
    format!("{of}(-{lag})")
}

/// Dummy columns for an ordering over `rows`: one column for binary groups,
/// one per non-baseline level otherwise.
pub(crate) fn shift_columns(
    ordering: &OrderingVariable,
    rows: std::ops::Range<usize>,
) -> Vec<(String, Vec<f64>)> {
    let values = &ordering.values()[rows];
    if ordering.kind() == OrderingKind::BinaryGroup {
        return vec![(ordering.name().to_string(), values.to_vec())];
    }
    ordering
        .levels()
        .into_iter()
        .skip(1)
        .map(|level| {
            (
                format!("{}={}", ordering.name(), level),
                values.iter().map(|&v| if v == level { 1.0 } else { 0.0 }).collect(),
            )
        })
        .collect()
}

pub(crate) fn build_design(data: &Dataset, spec: &ModelSpec) -> Result<Design> {
    spec.validate()?;
    let n = data.n();
    let first_row = spec.max_lag();
    if first_row >= n {
        return Err(Error::Underdetermined(format!("{first_row} lags leave no rows out of {n}")));
    }
    let rows = first_row..n;
    let mut design = Design {
        names: Vec::new(),
        columns: Vec::new(),
        response: data.column(&spec.response)?[rows.clone()].to_vec(),
        first_row,
    };
    if spec.include_intercept {
        design.push("const".into(), vec![1.0; rows.len()]);
    }
    for r in &spec.regressors {
        design.push(r.clone(), data.column(r)?[rows.clone()].to_vec());
    }
    for term in &spec.generic_terms {
        match term {
            GenericTerm::TrendPoly { degree } => {
                for k in 1..=*degree {
                    design.push(trend_name(k), trend_column(n, rows.clone(), k));
                }
            }
            GenericTerm::Lags { count, of } => {
                let source = data.column(of)?;
                for lag in 1..=*count {
                    design.push(lag_name(of, lag), rows.clone().map(|r| source[r - lag]).collect());
                }
            }
            GenericTerm::Shift { ordering } => {
                for (name, col) in shift_columns(data.ordering(ordering)?, rows.clone()) {
                    design.push(name, col);
                }
            }
        }
    }
    Ok(design)
}

/// An estimated linear regression.
///
/// For a degenerate (exact) fit `s` is 0, standard errors are 0 and
/// t-ratios and p-values are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub term_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_ratios: Vec<f64>,
    pub p_values: Vec<f64>,
    pub r2: f64,
    pub s: f64,
    pub rss: f64,
    pub n_used: usize,
    pub df_resid: usize,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    pub condition_estimate: f64,
    /// Residuals are numerically zero.
    pub degenerate: bool,
    /// First dataset row used (non-zero when lags trim the sample).
    pub first_row: usize,
}

impl FitResult {
    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.term_names.iter().position(|t| t == term)
    }

    pub fn params(&self) -> usize {
        self.coefficients.len()
    }
}

pub(crate) fn fit_design(spec: ModelSpec, design: Design) -> Result<FitResult> {
    let Design { names, columns, response, first_row } = design;
    let p = columns.len();
    let n = response.len();
    if n <= p {
        return Err(Error::Underdetermined(format!("{n} rows for {p} parameters")));
    }
    let x = Matrix::from_columns(&columns)?;
    let sol = least_squares(&x, &response)?;
    let df = n - p;

    let scale = (response.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let rms_resid = (sol.rss / n as f64).sqrt();
    let degenerate = rms_resid <= 1e-10 * scale || scale == 0.0;

    let s = if degenerate { 0.0 } else { (sol.rss / df as f64).sqrt() };
    let std_errors: Vec<f64> = (0..p).map(|i| s * sol.xtx_inverse[(i, i)].max(0.0).sqrt()).collect();
    let (t_ratios, p_values) = if degenerate {
        (vec![f64::NAN; p], vec![f64::NAN; p])
    } else {
        let t: Vec<f64> = sol.coefficients.iter().zip(&std_errors).map(|(b, se)| b / se).collect();
        let pv = t
            .iter()
            .map(|&ti| tail_prob(Distribution::StudentT { df: df as f64 }, ti, Sides::Two))
            .collect::<Result<Vec<_>>>()?;
        (t, pv)
    };

    let has_intercept = names.iter().any(|n| n == "const");
    let tss = if has_intercept {
        let m = response.iter().sum::<f64>() / n as f64;
        response.iter().map(|v| (v - m).powi(2)).sum::<f64>()
    } else {
        response.iter().map(|v| v * v).sum::<f64>()
    };
    let r2 = if tss > 0.0 { (1.0 - sol.rss / tss).clamp(0.0, 1.0) } else { 1.0 };
    let fitted = response.iter().zip(&sol.residuals).map(|(y, u)| y - u).collect();

    Ok(FitResult {
        spec,
        term_names: names,
        coefficients: sol.coefficients,
        std_errors,
        t_ratios,
        p_values,
        r2,
        s,
        rss: sol.rss,
        n_used: n,
        df_resid: df,
        residuals: sol.residuals,
        fitted,
        condition_estimate: sol.condition_estimate,
        degenerate,
        first_row,
    })
}

/// OLS fit of `spec` on `data`.
pub fn fit(data: &Dataset, spec: &ModelSpec) -> Result<FitResult> {
    let design = build_design(data, spec)?;
    fit_design(spec.clone(), design)
}

/// OLS fit restricted to the rows where `ordering == group`.
pub fn subset_fit(data: &Dataset, spec: &ModelSpec, ordering: &str, group: f64) -> Result<FitResult> {
    let ord = data.ordering(ordering)?;
    let mask: Vec<bool> = ord.values().iter().map(|&v| v == group).collect();
    let selected = mask.iter().filter(|&&m| m).count();
    if selected == 0 {
        return Err(Error::GroupTooSmall(format!("no rows with {ordering} = {group}")));
    }
    let subset = data.filter_rows(&mask)?;
    let design = build_design(&subset, spec)?;
    let p = design.columns.len();
    if selected < p + 2 {
        return Err(Error::GroupTooSmall(format!(
            "{ordering} = {group} selects {selected} rows; {} needed for {p} parameters",
            p + 2
        )));
    }
    fit_design(spec.clone(), design)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTest {
    pub stat: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// Two-sided t-test of `coefficient[index] = null_value`.
pub fn coefficient_test(fit: &FitResult, index: usize, null_value: f64, alpha: f64) -> Result<CoefficientTest> {
    if index >= fit.params() {
        return Err(Error::IndexOutOfRange { index, len: fit.params() });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} not in (0, 1)")));
    }
    if fit.degenerate {
        return Err(Error::Degenerate("exact fit has no sampling variability".into()));
    }
    let stat = (fit.coefficients[index] - null_value) / fit.std_errors[index];
    let p_value = tail_prob(Distribution::StudentT { df: fit.df_resid as f64 }, stat, Sides::Two)?;
    Ok(CoefficientTest { stat, p_value, reject: p_value < alpha })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(cols: &[(&str, Vec<f64>)]) -> Dataset {
        Dataset::new(
            cols.iter().map(|(n, v)| Series::new(*n, v.clone()).unwrap()).collect(),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn exact_line_is_degenerate() {
        let d = dataset(&[("x", vec![0.0, 1.0, 2.0, 3.0]), ("y", vec![1.0, 3.0, 5.0, 7.0])]);
        let f = fit(&d, &ModelSpec::new("y", ["x"])).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.s, 0.0);
        assert_eq!(f.r2, 1.0);
        assert!((f.coefficients[1] - 2.0).abs() < 1e-12);
        assert!(coefficient_test(&f, 1, 0.0, 0.05).is_err());
    }

    #[test]
    fn inference_quantities() {
        // y on x with x = 0..4, y = (0, 1, 1, 3, 3): slope .8, intercept 0.
        let d = dataset(&[("x", vec![0.0, 1.0, 2.0, 3.0, 4.0]), ("y", vec![0.0, 1.0, 1.0, 3.0, 3.0])]);
        let f = fit(&d, &ModelSpec::new("y", ["x"])).unwrap();
        assert!(f.coefficients[0].abs() < 1e-12);
        assert!((f.coefficients[1] - 0.8).abs() < 1e-12);
        // residuals (0, .2, -.6, .6, -.2): RSS = .8; s² = .8/3; Sxx = 10; TSS = 7.2.
        assert!((f.rss - 0.8).abs() < 1e-12);
        assert!((f.s - (0.8_f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((f.std_errors[1] - (0.08_f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((f.r2 - (1.0 - 0.8 / 7.2)).abs() < 1e-12);
        for i in 0..2 {
            assert!((f.t_ratios[i] - f.coefficients[i] / f.std_errors[i]).abs() < 1e-10);
        }
        let t = coefficient_test(&f, 1, 0.0, 0.05).unwrap();
        assert!((t.stat - f.t_ratios[1]).abs() < 1e-12);
        assert_eq!(f.term_names, vec!["const", "x"]);
    }

    #[test]
    fn zero_slope_test_does_not_reject() {
        let d = dataset(&[("x", vec![-1.0, 0.0, 1.0]), ("y", vec![1.0, 0.0, 1.0])]);
        let f = fit(&d, &ModelSpec::new("y", ["x"])).unwrap();
        let t = coefficient_test(&f, 1, 0.0, 0.05).unwrap();
        assert!(t.stat.abs() < 1e-12);
        assert!(t.p_value > 1.0 - 1e-12);
        assert!(!t.reject);
        assert!(matches!(coefficient_test(&f, 2, 0.0, 0.05), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn lags_trim_rows_and_trends_are_scaled() {
        let x: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).cos() + i as f64).collect();
        let d = dataset(&[("x", x), ("y", y.clone())]);
        let spec = ModelSpec::new("y", ["x"])
            .with_term(GenericTerm::TrendPoly { degree: 2 })
            .with_term(GenericTerm::Lags { count: 2, of: "y".into() });
        let design = build_design(&d, &spec).unwrap();
        assert_eq!(design.first_row, 2);
        assert_eq!(design.response.len(), 8);
        assert_eq!(design.names, vec!["const", "x", "t", "t^2", "y(-1)", "y(-2)"]);
        assert!((design.columns[2][0] - 0.3).abs() < 1e-15);
        assert!((design.columns[3][7] - 1.0).abs() < 1e-15);
        assert_eq!(design.columns[4][0], y[1]);
        assert_eq!(design.columns[5][0], y[0]);
        let f = fit(&d, &spec).unwrap();
        assert_eq!(f.n_used, 8);
        assert_eq!(f.df_resid, 2);
    }

    #[test]
    fn spec_errors() {
        let d = dataset(&[("x", vec![0.0, 1.0, 2.0]), ("y", vec![1.0, 0.0, 2.0])]);
        assert!(matches!(fit(&d, &ModelSpec::new("y", ["z"])), Err(Error::UnknownColumn(_))));
        assert!(matches!(fit(&d, &ModelSpec::new("y", ["y"])), Err(Error::InvalidSpec(_))));
        let spec = ModelSpec::new("y", ["x"]).with_term(GenericTerm::Lags { count: 0, of: "y".into() });
        assert!(matches!(fit(&d, &spec), Err(Error::InvalidSpec(_))));
        let spec = ModelSpec::new("y", ["x"]).with_term(GenericTerm::TrendPoly { degree: 1 });
        assert!(matches!(fit(&d, &spec), Err(Error::Underdetermined(_))));
    }

    #[test]
    fn subset_boundary() {
        // group 1 has 3 rows; y ~ x has p = 2, so p + 2 = 4 rows are required.
        let g = OrderingVariable::new("g", OrderingKind::BinaryGroup, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
            .unwrap();
        let d = Dataset::new(
            vec![
                Series::new("x", vec![0.0, 1.0, 2.0, 0.0, 1.0, 2.0, 3.0]).unwrap(),
                Series::new("y", vec![0.0, 1.0, 3.0, 1.0, 1.5, 2.5, 4.0]).unwrap(),
            ],
            vec![g],
        )
        .unwrap();
        let spec = ModelSpec::new("y", ["x"]);
        assert!(matches!(subset_fit(&d, &spec, "g", 1.0), Err(Error::GroupTooSmall(_))));
        let f = subset_fit(&d, &spec, "g", 0.0).unwrap();
        assert_eq!(f.n_used, 4);
        assert!(matches!(subset_fit(&d, &spec, "h", 0.0), Err(Error::UnknownOrdering(_))));
    }

    #[test]
    fn ordering_validation() {
        assert!(OrderingVariable::new("t", OrderingKind::Time, vec![1.0, 1.0]).is_err());
        assert!(OrderingVariable::new("g", OrderingKind::BinaryGroup, vec![0.0, 2.0]).is_err());
        let c = OrderingVariable::new("c", OrderingKind::Categorical, vec![3.0, 1.0, 2.0, 1.0]).unwrap();
        assert_eq!(c.levels(), vec![1.0, 2.0, 3.0]);
        let cols = shift_columns(&c, 0..4);
        assert_eq!(cols.len(), 2);
        assert_eq!(cols[0].0, "c=2");
        assert_eq!(cols[1].1, vec![1.0, 0.0, 0.0, 0.0]);
    }
}
