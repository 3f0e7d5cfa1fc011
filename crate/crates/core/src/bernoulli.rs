//! Simple Bernoulli model over stratified 2×2 tables.
//!
//! Rows of a [`ContingencyTable`] are (success, failure); columns are the two
//! groups being compared. Column 0 is "the first group" throughout.

use serde::{Deserialize, Serialize};

use crate::distributions::{normal_sf, tail_prob, Distribution, Sides};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    row_labels: [String; 2],
    col_labels: [String; 2],
    counts: [[u64; 2]; 2],
}

impl ContingencyTable {
    pub fn new(row_labels: [String; 2], col_labels: [String; 2], counts: [[i64; 2]; 2]) -> Result<Self> {
        if counts.iter().flatten().any(|&c| c < 0) {
            return Err(Error::InvalidCounts(format!("negative count in {counts:?}")));
        }
        let counts = counts.map(|r| r.map(|c| c as u64));
        for (j, label) in col_labels.iter().enumerate() {
            if counts[0][j] + counts[1][j] == 0 {
                return Err(Error::InvalidCounts(format!("column `{label}` is empty")));
            }
        }
        Ok(ContingencyTable { row_labels, col_labels, counts })
    }

    /// Table with rows ("success", "failure") and the given group labels.
    pub fn with_groups(first: &str, second: &str, counts: [[i64; 2]; 2]) -> Result<Self> {
        Self::new(["success".into(), "failure".into()], [first.into(), second.into()], counts)
    }

    pub fn row_labels(&self) -> &[String; 2] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String; 2] {
        &self.col_labels
    }

    pub fn counts(&self) -> &[[u64; 2]; 2] {
        &self.counts
    }

    pub fn successes(&self, col: usize) -> u64 {
        self.counts[0][col]
    }

    pub fn column_total(&self, col: usize) -> u64 {
        self.counts[0][col] + self.counts[1][col]
    }

    pub fn total(&self) -> u64 {
        self.column_total(0) + self.column_total(1)
    }

    pub fn estimate(&self, col: usize) -> BernoulliEstimate {
        estimate_theta(self.successes(col) as i64, self.column_total(col) as i64)
            .expect("validated table yields valid counts")
    }

    /// Which group has the strictly higher success rate (exact comparison).
    pub fn favors(&self) -> Favors {
        let lhs = self.successes(0) as u128 * self.column_total(1) as u128;
        let rhs = self.successes(1) as u128 * self.column_total(0) as u128;
        match lhs.cmp(&rhs) {
            std::cmp::Ordering::Greater => Favors::First,
            std::cmp::Ordering::Less => Favors::Second,
            std::cmp::Ordering::Equal => Favors::Tie,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Favors {
    First,
    Second,
    Tie,
}

impl Favors {
    pub fn sign(self) -> i8 {
        match self {
            Favors::First => 1,
            Favors::Second => -1,
            Favors::Tie => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub name: String,
    pub table: ContingencyTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedTables {
    aggregate: ContingencyTable,
    strata: Vec<Stratum>,
    complete: bool,
}

impl StratifiedTables {
    /// Validates that the strata never exceed the aggregate cell-wise, and
    /// sum to it exactly when `complete`.
    pub fn new(aggregate: ContingencyTable, strata: Vec<Stratum>, complete: bool) -> Result<Self> {
        if strata.is_empty() {
            return Err(Error::TooFewStrata(0));
        }
        let mut sum = [[0u64; 2]; 2];
        for s in &strata {
            for i in 0..2 {
                for j in 0..2 {
                    sum[i][j] += s.table.counts[i][j];
                }
            }
        }
        let agg = aggregate.counts;
        let exceeds = (0..2).any(|i| (0..2).any(|j| sum[i][j] > agg[i][j]));
        if exceeds {
            return Err(Error::InvalidCounts(format!("strata sum {sum:?} exceeds aggregate {agg:?}")));
        }
        if complete && sum != agg {
            return Err(Error::InvalidCounts(format!(
                "strata declared complete but sum to {sum:?}, not {agg:?}"
            )));
        }
        Ok(StratifiedTables { aggregate, strata, complete })
    }

    pub fn aggregate(&self) -> &ContingencyTable {
        &self.aggregate
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn complete(&self) -> bool {
        self.complete
    }

    /// Largest difference between a group's aggregate rate and the
    /// stratum-size weighted average of its stratum rates.
    pub fn convexity_gap(&self) -> f64 {
        (0..2)
            .map(|col| {
                let total: u64 = self.strata.iter().map(|s| s.table.column_total(col)).sum();
                let weighted: f64 = self
                    .strata
                    .iter()
                    .map(|s| s.table.estimate(col).theta_hat * s.table.column_total(col) as f64)
                    .sum::<f64>()
                    / total as f64;
                (weighted - self.aggregate.estimate(col).theta_hat).abs()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BernoulliEstimate {
    pub theta_hat: f64,
    pub n: u64,
    pub se: f64,
}

pub fn estimate_theta(successes: i64, total: i64) -> Result<BernoulliEstimate> {
    if total < 1 || successes < 0 || successes > total {
        return Err(Error::InvalidCounts(format!("{successes} successes out of {total}")));
    }
    let theta_hat = successes as f64 / total as f64;
    let se = (theta_hat * (1.0 - theta_hat) / total as f64).sqrt();
    Ok(BernoulliEstimate { theta_hat, n: total as u64, se })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProportionTest {
    pub z: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// Pooled-variance z-test of equal success probabilities.
pub fn two_proportion_test(a: &BernoulliEstimate, b: &BernoulliEstimate, alpha: f64) -> Result<ProportionTest> {
    if a.n == 0 || b.n == 0 {
        return Err(Error::InvalidCounts("empty sample".into()));
    }
    let (na, nb) = (a.n as f64, b.n as f64);
    let pooled = (a.theta_hat * na + b.theta_hat * nb) / (na + nb);
    if pooled <= 0.0 || pooled >= 1.0 {
        return Err(Error::DegeneratePool(pooled));
    }
    let se = (pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb)).sqrt();
    let z = (a.theta_hat - b.theta_hat) / se;
    let p_value = (2.0 * normal_sf(z.abs())).min(1.0);
    Ok(ProportionTest { z, p_value, reject: p_value < alpha })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityTest {
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
    pub id_holds: bool,
    /// Some expected cell count is below 5.
    pub small_sample: bool,
}

/// Pearson χ² test that group `column`'s success probability is the same in
/// every stratum. Strata where the group is absent are skipped.
pub fn homogeneity_test(st: &StratifiedTables, column: usize, alpha: f64) -> Result<HomogeneityTest> {
    if column > 1 {
        return Err(Error::IndexOutOfRange { index: column, len: 2 });
    }
    let cells: Vec<(f64, f64)> = st
        .strata
        .iter()
        .map(|s| (s.table.counts[0][column] as f64, s.table.counts[1][column] as f64))
        .filter(|(a, d)| a + d > 0.0)
        .collect();
    if cells.len() < 2 {
        return Err(Error::TooFewStrata(cells.len()));
    }
    let successes: f64 = cells.iter().map(|c| c.0).sum();
    let total: f64 = cells.iter().map(|c| c.0 + c.1).sum();
    let pooled = successes / total;
    if pooled <= 0.0 || pooled >= 1.0 {
        return Err(Error::DegeneratePool(pooled));
    }
    let mut chi2 = 0.0;
    let mut small_sample = false;
    for (a, d) in &cells {
        let m = a + d;
        let (ea, ed) = (m * pooled, m * (1.0 - pooled));
        small_sample |= ea < 5.0 || ed < 5.0;
        chi2 += (a - ea).powi(2) / ea + (d - ed).powi(2) / ed;
    }
    let df = cells.len() - 1;
    let p_value = tail_prob(Distribution::ChiSquare { df: df as f64 }, chi2, Sides::One)?;
    Ok(HomogeneityTest { chi2, df, p_value, id_holds: p_value >= alpha, small_sample })
}

/// Cochran–Mantel–Haenszel test of conditional independence of group and
/// outcome given stratum (no continuity correction).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmhTest {
    pub stat: f64,
    pub p_value: f64,
    /// Pooled excess of first-group successes over their expectation under
    /// conditional independence, per first-group observation.
    pub excess: f64,
    /// Sign of `excess`.
    pub direction: i8,
    /// Mantel–Haenszel common odds ratio (first group vs second).
    pub common_odds_ratio: Option<f64>,
    pub reject: bool,
}

pub fn cmh_test(st: &StratifiedTables, alpha: f64) -> Result<CmhTest> {
    let (mut excess, mut var, mut or_num, mut or_den, mut first) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for s in &st.strata {
        let c = s.table.counts.map(|r| r.map(|v| v as f64));
        let n = c[0][0] + c[0][1] + c[1][0] + c[1][1];
        if n < 2.0 {
            continue;
        }
        let (r1, r2) = (c[0][0] + c[0][1], c[1][0] + c[1][1]);
        let (c1, c2) = (c[0][0] + c[1][0], c[0][1] + c[1][1]);
        excess += c[0][0] - r1 * c1 / n;
        first += c1;
        var += r1 * r2 * c1 * c2 / (n * n * (n - 1.0));
        or_num += c[0][0] * c[1][1] / n;
        or_den += c[0][1] * c[1][0] / n;
    }
    if var <= 0.0 {
        return Err(Error::Degenerate("no stratum carries information on the association".into()));
    }
    let stat = excess * excess / var;
    let p_value = tail_prob(Distribution::ChiSquare { df: 1.0 }, stat, Sides::One)?;
    let direction = if excess > 0.0 {
        1
    } else if excess < 0.0 {
        -1
    } else {
        0
    };
    let common_odds_ratio = (or_den > 0.0).then(|| or_num / or_den);
    Ok(CmhTest { stat, p_value, excess: excess / first, direction, common_odds_ratio, reject: p_value < alpha })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub name: String,
    pub estimates: [BernoulliEstimate; 2],
    pub favors: Favors,
    pub flips: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateVerdict {
    pub aggregate: [BernoulliEstimate; 2],
    pub aggregate_favors: Favors,
    pub aggregate_test: ProportionTest,
    /// Per-group homogeneity across strata; `None` with fewer than two
    /// usable strata.
    pub homogeneity: [Option<HomogeneityTest>; 2],
    pub aggregate_trustworthy: bool,
    pub per_stratum: Vec<StratumSummary>,
    pub reversal_present: bool,
    pub narrative: Vec<String>,
}

fn pct(x: f64) -> String {
    let s = format!("{x:.2}");
    s.strip_prefix('0').map(str::to_string).unwrap_or(s)
}

/// Compares the aggregate association with the per-stratum ones and judges
/// whether the aggregate rates can be trusted (ID holding for both groups).
pub fn aggregate_verdict(st: &StratifiedTables, alpha: f64) -> Result<AggregateVerdict> {
    let agg = &st.aggregate;
    let labels = agg.col_labels();
    let aggregate = [agg.estimate(0), agg.estimate(1)];
    let aggregate_favors = agg.favors();
    let aggregate_test = two_proportion_test(&aggregate[0], &aggregate[1], alpha)?;

    let mut homogeneity = [None, None];
    for (col, slot) in homogeneity.iter_mut().enumerate() {
        *slot = match homogeneity_test(st, col, alpha) {
            Ok(h) => Some(h),
            Err(Error::TooFewStrata(_)) => None,
            Err(e) => return Err(e),
        };
    }
    let aggregate_trustworthy = homogeneity.iter().all(|h| h.as_ref().is_none_or(|h| h.id_holds));

    let per_stratum: Vec<StratumSummary> = st
        .strata
        .iter()
        .map(|s| {
            let favors = s.table.favors();
            StratumSummary {
                name: s.name.clone(),
                estimates: [s.table.estimate(0), s.table.estimate(1)],
                favors,
                flips: favors != Favors::Tie
                    && aggregate_favors != Favors::Tie
                    && favors != aggregate_favors,
            }
        })
        .collect();
    let flipped: Vec<&StratumSummary> = per_stratum.iter().filter(|s| s.flips).collect();
    let reversal_present = 2 * flipped.len() > per_stratum.len();

    let name_of = |f: Favors| match f {
        Favors::First => labels[0].clone(),
        Favors::Second => labels[1].clone(),
        Favors::Tie => "neither group".to_string(),
    };
    let mut narrative = vec![format!(
        "Aggregate rates: {} {} vs {} {}; the aggregate favors {} (z = {}, p {}).",
        labels[0],
        pct(aggregate[0].theta_hat),
        labels[1],
        pct(aggregate[1].theta_hat),
        name_of(aggregate_favors),
        crate::verdict::format_num(aggregate_test.z, 2),
        crate::verdict::p_clause(aggregate_test.p_value),
    )];
    if !st.complete {
        narrative.push(format!(
            "Partial stratification: the {} strata do not cover the aggregate.",
            st.strata.len()
        ));
    }
    if flipped.is_empty() {
        narrative.push("No stratum reverses the aggregate direction.".into());
    } else {
        let names: Vec<String> = flipped
            .iter()
            .map(|s| format!("{} ({} vs {})", s.name, pct(s.estimates[0].theta_hat), pct(s.estimates[1].theta_hat)))
            .collect();
        narrative.push(format!(
            "{} of {} strata favor {} instead: {}.",
            flipped.len(),
            per_stratum.len(),
            name_of(if aggregate_favors == Favors::First { Favors::Second } else { Favors::First }),
            names.join(", ")
        ));
    }
    for (col, h) in homogeneity.iter().enumerate() {
        match h {
            Some(h) if !h.id_holds => narrative.push(format!(
                "The {} rate varies across strata (chi2 = {:.2}, df = {}, p {}): not identically distributed.",
                labels[col],
                h.chi2,
                h.df,
                crate::verdict::p_clause(h.p_value)
            )),
            Some(h) => narrative.push(format!(
                "The {} rate is homogeneous across strata (p {}).",
                labels[col],
                crate::verdict::p_clause(h.p_value)
            )),
            None => {}
        }
        if h.as_ref().is_some_and(|h| h.small_sample) {
            narrative.push(format!("Some expected counts for {} are below 5; chi2 is approximate.", labels[col]));
        }
    }
    narrative.push(if aggregate_trustworthy {
        "The aggregate rates are consistent estimates of each group's success probability.".into()
    } else {
        "The aggregate rates are untrustworthy: pooling strata with different rates violates identical distribution.".into()
    });

    Ok(AggregateVerdict {
        aggregate,
        aggregate_favors,
        aggregate_test,
        homogeneity,
        aggregate_trustworthy,
        per_stratum,
        reversal_present,
        narrative,
    })
}

/// `P(A|B), P(A|¬B)` overall and within `C` and `¬C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventProbabilityTriple {
    pub p_a_given_b: f64,
    pub p_a_given_not_b: f64,
    pub given_c: (f64, f64),
    pub given_not_c: (f64, f64),
}

impl EventProbabilityTriple {
    /// B is the first group, A is success, and C/¬C are the two strata.
    pub fn from_tables(st: &StratifiedTables) -> Result<Self> {
        if st.strata.len() != 2 {
            return Err(Error::InvalidCounts(format!("need exactly 2 strata, got {}", st.strata.len())));
        }
        let pair = |t: &ContingencyTable| (t.estimate(0).theta_hat, t.estimate(1).theta_hat);
        let (p_a_given_b, p_a_given_not_b) = pair(&st.aggregate);
        Ok(EventProbabilityTriple {
            p_a_given_b,
            p_a_given_not_b,
            given_c: pair(&st.strata[0].table),
            given_not_c: pair(&st.strata[1].table),
        })
    }
}

/// True when the overall comparison of B vs ¬B is strictly reversed within
/// both C and ¬C.
pub fn check_event_reversal(t: &EventProbabilityTriple) -> bool {
    let overall = t.p_a_given_b.partial_cmp(&t.p_a_given_not_b);
    let c = t.given_c.0.partial_cmp(&t.given_c.1);
    let not_c = t.given_not_c.0.partial_cmp(&t.given_not_c.1);
    use std::cmp::Ordering::{Greater, Less};
    matches!((overall, c, not_c), (Some(Less), Some(Greater), Some(Greater)) | (Some(Greater), Some(Less), Some(Less)))
}
