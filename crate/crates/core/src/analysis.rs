//! End-to-end analyses: fit or tabulate, test adequacy, classify, report.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bernoulli::{
    aggregate_verdict, check_event_reversal, cmh_test, AggregateVerdict, CmhTest, ContingencyTable,
    EventProbabilityTriple, Favors, StratifiedTables, Stratum,
};
use crate::error::{Error, Result};
use crate::misspec::{
    corrected_correlation, run_battery, Assumption, BatteryConfig, CheckResult, CorrectedCorrelation, MisspecReport,
    Status,
};
use crate::regression::{coefficient_test, fit, Dataset, FitResult, GenericTerm, ModelSpec, OrderingKind};
use crate::stats::Series;
use crate::verdict::{
    classify, format_num, format_p, p_clause, AdequacyReport, Association, AssociationPair, Direction, Report,
    ReversalVerdict,
};

/// What the conditional association conditions on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Further regressors added to the model.
    Regressors(Vec<String>),
    /// Separate fits within each level of a binary or categorical ordering.
    ByGroup(String),
    /// Trend and own-lag dependence removed along the time ordering.
    TimeCorrected,
}

#[derive(Debug, Clone)]
pub struct RegressionAnalysis {
    pub verdict: ReversalVerdict,
    pub marginal_fit: FitResult,
    pub marginal_battery: MisspecReport,
    pub conditional_fits: Vec<(String, FitResult)>,
    pub conditional_batteries: Vec<MisspecReport>,
    pub corrected: Option<CorrectedCorrelation>,
    pub config: BatteryConfig,
}

fn slope_association(source: &str, f: &FitResult, term: &str, alpha: f64) -> Result<Association> {
    let i = f.index_of(term).ok_or_else(|| Error::UnknownColumn(term.to_string()))?;
    let test = coefficient_test(f, i, 0.0, alpha)?;
    Ok(Association::new(source, f.coefficients[i], Some(test.p_value)))
}

fn nondegenerate(f: FitResult, label: &str) -> Result<FitResult> {
    if f.degenerate {
        Err(Error::Degenerate(format!("the {label} model fits the data exactly")))
    } else {
        Ok(f)
    }
}

/// Compares the association of `response` with `regressor` in the simple
/// regression against its conditional counterpart, and classifies any
/// reversal by the adequacy of both models.
pub fn analyze_regression(
    data: &Dataset,
    response: &str,
    regressor: &str,
    conditioning: &Conditioning,
    cfg: &BatteryConfig,
) -> Result<RegressionAnalysis> {
    cfg.validate()?;
    let alpha = cfg.alpha;
    let marginal_spec = ModelSpec::new(response, [regressor]);
    let marginal_label = format!("marginal ({response} ~ {regressor})");
    let marginal_fit = nondegenerate(fit(data, &marginal_spec)?, &marginal_label)?;
    // Conditioning on a group always puts the pooled model's invariance
    // across that group in question.
    let mut marginal_cfg = cfg.clone();
    if let Conditioning::ByGroup(name) = conditioning {
        if !marginal_cfg.orderings_to_test.contains(name) {
            marginal_cfg.orderings_to_test.push(name.clone());
        }
    }
    let marginal_battery = run_battery(data, &marginal_fit, &marginal_cfg)?;
    let marginal = slope_association(&marginal_label, &marginal_fit, regressor, alpha)?;
    let marginal_adequacy = AdequacyReport::from_misspec(&marginal_label, &marginal_battery);

    let mut corrected = None;
    let (conditional, conditional_adequacy, conditional_fits, conditional_batteries, conditioning_text) =
        match conditioning {
            Conditioning::Regressors(extra) => {
                if extra.is_empty() {
                    return Err(Error::InvalidSpec("no conditioning regressors".into()));
                }
                let mut regs = vec![regressor.to_string()];
                regs.extend(extra.iter().cloned());
                let label = format!("conditional ({response} ~ {})", regs.join(" + "));
                let f = nondegenerate(fit(data, &ModelSpec::new(response, regs))?, &label)?;
                let battery = run_battery(data, &f, cfg)?;
                let assoc = slope_association(&label, &f, regressor, alpha)?;
                let adequacy = AdequacyReport::from_misspec(&label, &battery);
                (assoc, adequacy, vec![(label, f)], vec![battery], extra.join(", "))
            }
            Conditioning::ByGroup(name) => {
                let ord = data.ordering(name)?;
                if !matches!(ord.kind(), OrderingKind::BinaryGroup | OrderingKind::Categorical) {
                    return Err(Error::InvalidSpec(format!("`{name}` is not a binary or categorical ordering")));
                }
                let label = format!("by {name} ({response} ~ {regressor})");
                let mut group_cfg = cfg.clone();
                group_cfg.orderings_to_test.retain(|o| o != name);
                let mut fits = Vec::new();
                let mut batteries = Vec::new();
                let mut slopes = Vec::new();
                for level in ord.levels() {
                    let group_label = format!("{name}={level}");
                    let mask: Vec<bool> = ord.values().iter().map(|&v| v == level).collect();
                    let subset = data.filter_rows(&mask)?;
                    let selected = mask.iter().filter(|m| **m).count();
                    if selected < 4 {
                        return Err(Error::GroupTooSmall(format!("{group_label} has {selected} rows")));
                    }
                    let f = nondegenerate(fit(&subset, &marginal_spec)?, &group_label)?;
                    let i = f.index_of(regressor).expect("regressor is in the model");
                    let test = coefficient_test(&f, i, 0.0, alpha)?;
                    slopes.push((f.coefficients[i], f.std_errors[i], test.p_value));
                    batteries.push(run_battery(&subset, &f, &group_cfg)?);
                    fits.push((group_label, f));
                }
                let assoc = group_association(&label, &slopes);
                let labels: Vec<&str> = fits.iter().map(|(l, _)| l.as_str()).collect();
                let refs: Vec<&MisspecReport> = batteries.iter().collect();
                let adequacy = AdequacyReport::merge(&label, &refs, &labels);
                (assoc, adequacy, fits, batteries, format!("groups of {name}"))
            }
            Conditioning::TimeCorrected => {
                if data.time_ordering().is_none() {
                    return Err(Error::InvalidSpec("trend and lag correction needs a time ordering".into()));
                }
                let spec = marginal_spec
                    .clone()
                    .with_term(GenericTerm::TrendPoly { degree: cfg.trend_degree })
                    .with_term(GenericTerm::Lags { count: cfg.lag_count, of: response.to_string() })
                    .with_term(GenericTerm::Lags { count: cfg.lag_count, of: regressor.to_string() });
                let label = format!(
                    "corrected ({response}, {regressor} after degree-{} trend and {} lags)",
                    cfg.trend_degree, cfg.lag_count
                );
                let f = nondegenerate(fit(data, &spec)?, &label)?;
                let battery = run_battery(data, &f, cfg)?;
                let x = Series::new(regressor, data.column(regressor)?.to_vec())?;
                let y = Series::new(response, data.column(response)?.to_vec())?;
                let cc = corrected_correlation(&x, &y, cfg)?;
                corrected = Some(cc);
                let assoc = Association::new(&label, cc.rho(), Some(cc.p_value()));
                let adequacy = AdequacyReport::from_misspec(&label, &battery);
                (
                    assoc,
                    adequacy,
                    vec![(label, f)],
                    vec![battery],
                    format!("trend (degree {}) and {} lags", cfg.trend_degree, cfg.lag_count),
                )
            }
        };

    let pair = AssociationPair { marginal, conditional, conditioning: conditioning_text };
    let verdict = classify(&pair, &marginal_adequacy, &conditional_adequacy, alpha)?;
    Ok(RegressionAnalysis {
        verdict,
        marginal_fit,
        marginal_battery,
        conditional_fits,
        conditional_batteries,
        corrected,
        config: cfg.clone(),
    })
}

/// Within-group slopes combined: the precision-weighted mean slope, with a
/// direction only when every group agrees in sign, tested by the largest
/// group p-value.
fn group_association(label: &str, slopes: &[(f64, f64, f64)]) -> Association {
    let weights: f64 = slopes.iter().map(|(_, se, _)| 1.0 / (se * se)).sum();
    let estimate = slopes.iter().map(|(b, se, _)| b / (se * se)).sum::<f64>() / weights;
    let signs: Vec<Direction> = slopes.iter().map(|(b, _, _)| Direction::of(*b)).collect();
    if signs.iter().all(|s| *s == signs[0]) && signs[0] != Direction::Zero {
        let p = slopes.iter().map(|(_, _, p)| *p).fold(0.0, f64::max);
        Association { source: label.to_string(), estimate, direction: signs[0], p_value: Some(p) }
    } else {
        Association { source: label.to_string(), estimate, direction: Direction::Zero, p_value: None }
    }
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

pub fn fit_json(f: &FitResult) -> Value {
    let terms: Vec<Value> = (0..f.params())
        .map(|i| {
            json!({
                "term": f.term_names[i],
                "coefficient": num(f.coefficients[i]),
                "std_error": num(f.std_errors[i]),
                "t_ratio": num(f.t_ratios[i]),
                "p_value": num(f.p_values[i]),
            })
        })
        .collect();
    json!({
        "response": f.spec.response,
        "terms": terms,
        "r2": num(f.r2),
        "s": num(f.s),
        "rss": num(f.rss),
        "n": f.n_used,
        "df_resid": f.df_resid,
        "condition_estimate": num(f.condition_estimate),
        "degenerate": f.degenerate,
    })
}

/// `y = b0 (se) [p] + b1 (se) [p] x …` with summary statistics.
pub fn equation_text(label: &str, f: &FitResult) -> String {
    let mut s = format!("{label}: {} =", f.spec.response);
    for i in 0..f.params() {
        let b = f.coefficients[i];
        let sign = match (i, b < 0.0) {
            (0, true) => " -",
            (0, false) => " ",
            (_, true) => " - ",
            (_, false) => " + ",
        };
        let name = if f.term_names[i] == "const" { String::new() } else { format!(" {}", f.term_names[i]) };
        s.push_str(&format!(
            "{sign}{} ({}) [{}]{name}",
            format_num(b.abs(), 3),
            format_num(f.std_errors[i], 3),
            format_p(f.p_values[i])
        ));
    }
    s.push_str(&format!("; R2 = {}, s = {}, n = {}", format_num(f.r2, 3), format_num(f.s, 3), f.n_used));
    s
}

fn battery_json(r: &MisspecReport) -> Value {
    json!({
        "overall_adequate": r.overall_adequate,
        "checks": r.checks,
    })
}

impl RegressionAnalysis {
    pub fn report(&self) -> Report {
        let mut narrative = vec![equation_text(&self.verdict.pair.marginal.source, &self.marginal_fit)];
        for (label, f) in &self.conditional_fits {
            narrative.push(equation_text(label, f));
        }
        if let Some(cc) = &self.corrected {
            narrative.push(format!(
                "Naive correlation {} [{}] (n = {}); corrected correlation {} [{}] (n = {}).",
                format_num(cc.naive.rho, 3),
                format_p(cc.naive.p_value),
                cc.naive.n,
                format_num(cc.rho(), 3),
                format_p(cc.p_value()),
                cc.n_effective()
            ));
        }
        for c in self.marginal_battery.checks.iter().chain(self.conditional_batteries.iter().flat_map(|b| &b.checks)) {
            if c.status == Status::Untested {
                if let Some(note) = &c.note {
                    let line = format!("Untested: {} ({note}).", c.name);
                    if !narrative.contains(&line) {
                        narrative.push(line);
                    }
                }
            }
        }
        let details = json!({
            "config": self.config,
            "marginal_fit": fit_json(&self.marginal_fit),
            "marginal_battery": battery_json(&self.marginal_battery),
            "conditional_fits": self.conditional_fits.iter().map(|(l, f)| json!({"label": l, "fit": fit_json(f)})).collect::<Vec<_>>(),
            "conditional_batteries": self.conditional_batteries.iter().map(battery_json).collect::<Vec<_>>(),
            "corrected_correlation": self.corrected,
        });
        Report::from_verdict(&self.verdict, narrative, details)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableLabels {
    pub rows: [String; 2],
    pub cols: [String; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableJson {
    pub labels: TableLabels,
    pub counts: [[i64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumJson {
    pub name: String,
    pub counts: [[i64; 2]; 2],
}

/// Stratified 2×2 tables as read from JSON. Strata share the aggregate's
/// labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableInput {
    pub aggregate: TableJson,
    pub strata: Vec<StratumJson>,
    pub complete: bool,
}

impl TableInput {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidDataset(format!("table JSON: {e}")))
    }

    pub fn into_tables(self) -> Result<StratifiedTables> {
        let labels = self.aggregate.labels;
        let aggregate = ContingencyTable::new(labels.rows.clone(), labels.cols.clone(), self.aggregate.counts)?;
        let strata = self
            .strata
            .into_iter()
            .map(|s| {
                Ok(Stratum {
                    name: s.name,
                    table: ContingencyTable::new(labels.rows.clone(), labels.cols.clone(), s.counts)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        StratifiedTables::new(aggregate, strata, self.complete)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableAnalysis {
    pub tables: StratifiedTables,
    pub aggregate: AggregateVerdict,
    pub cmh: CmhTest,
    /// The event-probability reversal pattern; only defined for two strata.
    pub pattern_holds: Option<bool>,
    pub verdict: ReversalVerdict,
}

/// Aggregate versus stratified association of group and success.
pub fn analyze_table(tables: &StratifiedTables, alpha: f64) -> Result<TableAnalysis> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} not in (0, 1)")));
    }
    let aggregate = aggregate_verdict(tables, alpha)?;
    let cmh = cmh_test(tables, alpha)?;
    let pattern_holds = EventProbabilityTriple::from_tables(tables).ok().map(|t| check_event_reversal(&t));
    let cols = tables.aggregate().col_labels();

    let marginal_label = "aggregate table".to_string();
    let conditional_label = "stratified tables".to_string();
    let marginal = Association::new(
        &marginal_label,
        aggregate.aggregate[0].theta_hat - aggregate.aggregate[1].theta_hat,
        Some(aggregate.aggregate_test.p_value),
    );
    let conditional = Association::new(&conditional_label, cmh.excess, Some(cmh.p_value));

    let checks: Vec<CheckResult> = aggregate
        .homogeneity
        .iter()
        .zip(cols)
        .filter_map(|(h, label)| {
            h.as_ref().map(|h| CheckResult {
                name: format!("identical distribution of {label} across strata"),
                assumption: Assumption::TInvariance,
                statistic: Some(h.chi2),
                p_value: Some(h.p_value),
                status: if h.id_holds { Status::Pass } else { Status::Fail },
                note: h.small_sample.then(|| "some expected counts below 5".to_string()),
            })
        })
        .collect();
    let marginal_adequacy = AdequacyReport::from_checks(&marginal_label, checks);
    let conditional_adequacy = AdequacyReport::from_checks(&conditional_label, Vec::new());
    let names: Vec<&str> = tables.strata().iter().map(|s| s.name.as_str()).collect();
    let pair = AssociationPair { marginal, conditional, conditioning: format!("strata {}", names.join(", ")) };
    let verdict = classify(&pair, &marginal_adequacy, &conditional_adequacy, alpha)?;
    Ok(TableAnalysis { tables: tables.clone(), aggregate, cmh, pattern_holds, verdict })
}

impl TableAnalysis {
    pub fn report(&self) -> Report {
        let cols = self.tables.aggregate().col_labels();
        let mut narrative = self.aggregate.narrative.clone();
        for s in &self.aggregate.per_stratum {
            let favors = match s.favors {
                Favors::First => format!("favors {}", cols[0]),
                Favors::Second => format!("favors {}", cols[1]),
                Favors::Tie => "tie".to_string(),
            };
            narrative.push(format!(
                "{}: {} {} vs {} {} ({favors})",
                s.name,
                cols[0],
                format_num(s.estimates[0].theta_hat, 2),
                cols[1],
                format_num(s.estimates[1].theta_hat, 2)
            ));
        }
        narrative.push(format!(
            "Stratified association (Mantel-Haenszel): chi2 = {}, p {}, common odds ratio {}.",
            format_num(self.cmh.stat, 3),
            p_clause(self.cmh.p_value),
            self.cmh.common_odds_ratio.map(|o| format_num(o, 3)).unwrap_or_else(|| "undefined".into())
        ));
        if let Some(p) = self.pattern_holds {
            narrative.push(format!("Event-probability reversal pattern holds: {p}."));
        }
        let details = json!({
            "complete": self.tables.complete(),
            "aggregate": self.aggregate,
            "cmh": self.cmh,
            "pattern_holds": self.pattern_holds,
            "convexity_gap": self.tables.complete().then(|| self.tables.convexity_gap()),
        });
        Report::from_verdict(&self.verdict, narrative, details)
    }
}
