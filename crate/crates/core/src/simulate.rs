//! Seeded data generators and Monte Carlo error-rate estimation.
//!
//! Replication `r` of a spec with seed `s` draws from the ChaCha8 stream
//! `(s, r)`, so results do not depend on thread count or execution order.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::misspec::{corrected_correlation, run_battery, BatteryConfig, Status};
use crate::parameterization::JointMoments;
use crate::regression::{coefficient_test, fit, subset_fit, Dataset, ModelSpec, OrderingKind, OrderingVariable};
use crate::stats::{correlation_test, Series};

/// Name of the time ordering attached to generated time-indexed datasets.
pub const TIME: &str = "time";
/// Name of the group ordering emitted by the two-group generator.
pub const GROUP: &str = "gender";

const BURN_IN: usize = 100;

/// One trending, autocorrelated series: a polynomial in `τ = t/n` plus
/// AR noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendingSeries {
    pub name: String,
    /// Coefficients of `1, τ, τ², …`.
    pub trend: Vec<f64>,
    /// `φ₁, …, φ_p` in `e_t = Σ φ_j e_{t−j} + η_t`.
    pub ar: Vec<f64>,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub intercept: f64,
    pub slope: f64,
    pub x_mean: f64,
    pub x_sd: f64,
    pub noise_sd: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpKind {
    /// Columns `y, x1, x2` drawn jointly Normal, with a time ordering.
    NiidRegression { joint: JointMoments, n: usize },
    /// Two independent trending series, with a time ordering.
    TrendingPair { n: usize, series: [TrendingSeries; 2] },
    /// Columns `x, y` and a binary `gender` ordering (1 for the first group).
    TwoGroupRegression { groups: [GroupSpec; 2] },
    /// Column `x` of 0/1 draws, with a time ordering.
    BernoulliIid { theta: f64, n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub seed: u64,
}

/// Male then female group of the two-group schooling design: returns to
/// schooling differ by group and women have more schooling on average.
pub const EXAMPLE3_GROUPS: [GroupSpec; 2] = [
    GroupSpec { intercept: 45.229, slope: 0.409, x_mean: 13.0, x_sd: 2.0, noise_sd: 2.371, n: 50 },
    GroupSpec { intercept: 35.106, slope: 0.675, x_mean: 17.0, x_sd: 2.0, noise_sd: 2.124, n: 50 },
];

impl DgpKind {
    /// Two independent series sharing a falling linear-plus-cubic trend
    /// with AR(1) noise, on the scale of a century of annual data.
    pub fn trending_default(n: usize) -> Self {
        DgpKind::TrendingPair {
            n,
            series: [
                TrendingSeries { name: "x".into(), trend: vec![76.0, -10.0, 0.0, -6.0], ar: vec![0.8], noise_sd: 1.0 },
                TrendingSeries { name: "y".into(), trend: vec![23.0, -5.0, 0.0, -4.0], ar: vec![0.8], noise_sd: 0.4 },
            ],
        }
    }

    /// Independent `y, x1, x2` with unit variances.
    pub fn niid_null(n: usize) -> Self {
        DgpKind::NiidRegression {
            joint: JointMoments::from_correlations(0.0, 0.0, 0.0).expect("identity is positive definite"),
            n,
        }
    }

    pub fn example3(n_per_group: usize) -> Self {
        let mut groups = EXAMPLE3_GROUPS;
        for g in &mut groups {
            g.n = n_per_group;
        }
        DgpKind::TwoGroupRegression { groups }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        match self {
            DgpKind::NiidRegression { joint, n } => {
                joint.validate().map_err(|e| Error::InvalidSpec(e.to_string()))?;
                if *n < 3 {
                    return bad(format!("n = {n}; need at least 3"));
                }
            }
            DgpKind::TrendingPair { n, series } => {
                if *n < 3 {
                    return bad(format!("n = {n}; need at least 3"));
                }
                if series[0].name == series[1].name {
                    return bad("series names must differ".into());
                }
                for s in series {
                    if !(s.noise_sd > 0.0 && s.noise_sd.is_finite()) {
                        return bad(format!("noise sd of `{}` must be positive", s.name));
                    }
                    if s.trend.iter().chain(&s.ar).any(|v| !v.is_finite()) {
                        return bad(format!("non-finite coefficient in `{}`", s.name));
                    }
                    if !ar_is_stationary(&s.ar) {
                        return bad(format!("AR coefficients of `{}` are not stationary", s.name));
                    }
                }
            }
            DgpKind::TwoGroupRegression { groups } => {
                for g in groups {
                    if !(g.x_sd > 0.0 && g.noise_sd > 0.0) {
                        return bad("standard deviations must be positive".into());
                    }
                    if [g.intercept, g.slope, g.x_mean, g.x_sd, g.noise_sd].iter().any(|v| !v.is_finite()) {
                        return bad("non-finite group parameter".into());
                    }
                    if g.n < 3 {
                        return bad(format!("group size {} too small", g.n));
                    }
                }
            }
            DgpKind::BernoulliIid { theta, n } => {
                if !(*theta > 0.0 && *theta < 1.0) {
                    return bad(format!("theta {theta} not in (0, 1)"));
                }
                if *n < 1 {
                    return bad("n must be positive".into());
                }
            }
        }
        Ok(())
    }
}

/// Stationarity of `e_t = Σ φ_j e_{t−j} + η_t` via the step-down recursion
/// on the partial autocorrelations.
pub fn ar_is_stationary(phi: &[f64]) -> bool {
    let mut a = phi.to_vec();
    while let Some(&k) = a.last() {
        if !(k.abs() < 1.0) {
            return false;
        }
        let p = a.len();
        let denom = 1.0 - k * k;
        a = (0..p - 1).map(|j| (a[j] + k * a[p - 2 - j]) / denom).collect();
    }
    true
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn time_ordering(n: usize) -> OrderingVariable {
    OrderingVariable::new(TIME, OrderingKind::Time, (1..=n).map(|t| t as f64).collect())
        .expect("1..=n is strictly increasing")
}

fn draw(kind: &DgpKind, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    match kind {
        DgpKind::NiidRegression { joint, n } => {
            let l = cholesky3(&joint.sigma)?;
            let mut cols: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(*n)).collect();
            for _ in 0..*n {
                let z = [normal(rng), normal(rng), normal(rng)];
                for i in 0..3 {
                    let v: f64 = (0..=i).map(|j| l[i][j] * z[j]).sum();
                    cols[i].push(joint.mu[i] + v);
                }
            }
            let mut cols = cols.into_iter();
            Dataset::new(
                vec![
                    Series::new("y", cols.next().unwrap())?,
                    Series::new("x1", cols.next().unwrap())?,
                    Series::new("x2", cols.next().unwrap())?,
                ],
                vec![time_ordering(*n)],
            )
        }
        DgpKind::TrendingPair { n, series } => {
            let mut columns = Vec::with_capacity(2);
            for s in series {
                let p = s.ar.len();
                let mut e = vec![0.0; BURN_IN + n];
                for t in 0..e.len() {
                    let ar: f64 = (1..=p).filter(|j| *j <= t).map(|j| s.ar[j - 1] * e[t - j]).sum();
                    e[t] = ar + s.noise_sd * normal(rng);
                }
                let values = (0..*n)
                    .map(|t| {
                        let tau = (t + 1) as f64 / *n as f64;
                        s.trend.iter().rev().fold(0.0, |acc, c| acc * tau + c) + e[BURN_IN + t]
                    })
                    .collect();
                columns.push(Series::new(s.name.clone(), values)?);
            }
            Dataset::new(columns, vec![time_ordering(*n)])
        }
        DgpKind::TwoGroupRegression { groups } => {
            let (mut x, mut y, mut g) = (Vec::new(), Vec::new(), Vec::new());
            for (k, spec) in groups.iter().enumerate() {
                for _ in 0..spec.n {
                    let xi = spec.x_mean + spec.x_sd * normal(rng);
                    x.push(xi);
                    y.push(spec.intercept + spec.slope * xi + spec.noise_sd * normal(rng));
                    g.push(if k == 0 { 1.0 } else { 0.0 });
                }
            }
            Dataset::new(
                vec![Series::new("x", x)?, Series::new("y", y)?],
                vec![OrderingVariable::new(GROUP, OrderingKind::BinaryGroup, g)?],
            )
        }
        DgpKind::BernoulliIid { theta, n } => {
            let x = (0..*n).map(|_| if rng.random::<f64>() < *theta { 1.0 } else { 0.0 }).collect();
            Dataset::new(vec![Series::new("x", x)?], vec![time_ordering(*n)])
        }
    }
}

fn cholesky3(s: &[[f64; 3]; 3]) -> Result<[[f64; 3]; 3]> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let sum: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = s[i][i] - sum;
                if d <= 0.0 {
                    return Err(Error::NotPositiveDefinite("covariance of the joint distribution".into()));
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (s[i][j] - sum) / l[j][j];
            }
        }
    }
    Ok(l)
}

/// The dataset for `spec` (replication 0 of its seed).
pub fn generate(spec: &DgpSpec) -> Result<Dataset> {
    generate_replication(spec, 0)
}

/// Replication `r` of `spec`, drawn from the stream `(seed, r)`.
pub fn generate_replication(spec: &DgpSpec, r: u64) -> Result<Dataset> {
    spec.kind.validate()?;
    draw(&spec.kind, &mut rng_for(spec.seed, r))
}

/// A two-group dataset with the reversal pattern: a negative pooled slope
/// of `y` on `x` while both within-group slopes are positive.
#[derive(Debug, Clone)]
pub struct Example3 {
    pub data: Dataset,
    /// Number of draws needed (1 when the first draw had the pattern).
    pub attempts: usize,
}

pub const EXAMPLE3_MAX_ATTEMPTS: usize = 100;

pub fn example3_generator(n_per_group: usize, seed: u64) -> Result<Example3> {
    if n_per_group < 10 {
        return Err(Error::InvalidSpec(format!("n per group = {n_per_group}; need at least 10")));
    }
    let kind = DgpKind::example3(n_per_group);
    kind.validate()?;
    let spec = ModelSpec::new("y", ["x"]);
    for attempt in 0..EXAMPLE3_MAX_ATTEMPTS {
        let data = draw(&kind, &mut rng_for(seed, attempt as u64))?;
        if simpson_pattern(&data, &spec)? {
            return Ok(Example3 { data, attempts: attempt + 1 });
        }
    }
    Err(Error::GenerationFailed(EXAMPLE3_MAX_ATTEMPTS))
}

/// Pooled slope negative and both group slopes positive.
pub fn simpson_pattern(data: &Dataset, spec: &ModelSpec) -> Result<bool> {
    let pooled = fit(data, spec)?.coefficients[1];
    let male = subset_fit(data, spec, GROUP, 1.0)?.coefficients[1];
    let female = subset_fit(data, spec, GROUP, 0.0)?.coefficients[1];
    Ok(pooled < 0.0 && male > 0.0 && female > 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub replications: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    pub mc_se: f64,
    pub nominal_alpha: f64,
}

impl MonteCarloResult {
    pub fn new(rejections: usize, replications: usize, nominal_alpha: f64) -> Self {
        let rate = rejections as f64 / replications as f64;
        MonteCarloResult {
            replications,
            rejections,
            rejection_rate: rate,
            mc_se: (rate * (1.0 - rate) / replications as f64).sqrt(),
            nominal_alpha,
        }
    }

    /// Whether `target` lies within `k` binomial standard errors of the
    /// rate, using the standard error implied by `target`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        let se = (target * (1.0 - target) / self.replications as f64).sqrt();
        (self.rejection_rate - target).abs() <= k * se
    }
}

/// A test applied to each generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "test", rename_all = "snake_case")]
pub enum McTest {
    /// t-test of `term = null` in the regression `spec`.
    Coefficient { spec: ModelSpec, term: String, null: f64 },
    /// t-test of zero correlation between two columns.
    NaiveCorrelation { x: String, y: String },
    /// Zero-correlation test after detrending and dememorizing.
    CorrectedCorrelation { x: String, y: String, cfg: BatteryConfig },
}

impl McTest {
    pub fn rejects(&self, data: &Dataset, alpha: f64) -> Result<bool> {
        match self {
            McTest::Coefficient { spec, term, null } => {
                let f = fit(data, spec)?;
                let index = f.index_of(term).ok_or_else(|| Error::UnknownColumn(term.clone()))?;
                Ok(coefficient_test(&f, index, *null, alpha)?.reject)
            }
            McTest::NaiveCorrelation { x, y } => {
                Ok(correlation_test(data.column(x)?, data.column(y)?)?.p_value < alpha)
            }
            McTest::CorrectedCorrelation { x, y, cfg } => {
                let xs = Series::new(x.clone(), data.column(x)?.to_vec())?;
                let ys = Series::new(y.clone(), data.column(y)?.to_vec())?;
                Ok(corrected_correlation(&xs, &ys, cfg)?.p_value() < alpha)
            }
        }
    }
}

pub const MIN_REPLICATIONS: usize = 1000;

fn check_mc_inputs(alpha: f64, replications: usize) -> Result<()> {
    if replications < MIN_REPLICATIONS {
        return Err(Error::TooFewReplications(replications));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} not in (0, 1)")));
    }
    Ok(())
}

/// Empirical rejection rate of `test` over `replications` draws of `dgp`.
pub fn mc_error_rate(dgp: &DgpSpec, test: &McTest, alpha: f64, replications: usize) -> Result<MonteCarloResult> {
    check_mc_inputs(alpha, replications)?;
    dgp.kind.validate()?;
    let rejections = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let data = draw(&dgp.kind, &mut rng_for(dgp.seed, r))?;
            test.rejects(&data, alpha).map(usize::from)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(MonteCarloResult::new(rejections, replications, alpha))
}

/// Rejection rate of every check of the misspecification battery applied to
/// the fit of `spec`, keyed by check name. Checks that could not run in a
/// replication count as non-rejections; their counts are reported in
/// `untested`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryRates {
    pub rates: BTreeMap<String, MonteCarloResult>,
    pub untested: BTreeMap<String, usize>,
}

pub fn mc_battery_rates(
    dgp: &DgpSpec,
    spec: &ModelSpec,
    cfg: &BatteryConfig,
    replications: usize,
) -> Result<BatteryRates> {
    check_mc_inputs(cfg.alpha, replications)?;
    dgp.kind.validate()?;
    let per_rep: Vec<Vec<(String, Status)>> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let data = draw(&dgp.kind, &mut rng_for(dgp.seed, r))?;
            let base = fit(&data, spec)?;
            let report = run_battery(&data, &base, cfg)?;
            Ok(report.checks.into_iter().map(|c| (c.name, c.status)).collect())
        })
        .collect::<Result<_>>()?;
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for checks in &per_rep {
        for (name, status) in checks {
            let e = counts.entry(name.clone()).or_default();
            match status {
                Status::Fail => e.0 += 1,
                Status::Untested => e.1 += 1,
                Status::Pass => {}
            }
        }
    }
    Ok(BatteryRates {
        rates: counts
            .iter()
            .map(|(k, (fails, _))| (k.clone(), MonteCarloResult::new(*fails, replications, cfg.alpha)))
            .collect(),
        untested: counts.into_iter().map(|(k, (_, u))| (k, u)).collect(),
    })
}
