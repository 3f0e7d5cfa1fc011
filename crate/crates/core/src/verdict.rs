//! Classification of association reversals and report rendering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::misspec::{Assumption, CheckResult, MisspecReport, Status};

pub const SCHEMA: &str = "reversal-report/1";
pub const SUBSTANTIVE: &str = "not assessed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
    #[serde(rename = "0")]
    Zero,
}

impl Direction {
    pub fn of(x: f64) -> Self {
        if x > 0.0 {
            Direction::Positive
        } else if x < 0.0 {
            Direction::Negative
        } else {
            Direction::Zero
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Direction::Positive => "+",
            Direction::Negative => "-",
            Direction::Zero => "0",
        }
    }
}

/// One side of an association pair: an estimated association and the
/// p-value of its test of no association.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Association {
    /// The model or table the association comes from.
    pub source: String,
    pub estimate: f64,
    pub direction: Direction,
    pub p_value: Option<f64>,
}

impl Association {
    pub fn new(source: impl Into<String>, estimate: f64, p_value: Option<f64>) -> Self {
        Association { source: source.into(), estimate, direction: Direction::of(estimate), p_value }
    }

    fn significant(&self, alpha: f64) -> bool {
        self.p_value.is_some_and(|p| p < alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationPair {
    pub marginal: Association,
    pub conditional: Association,
    /// What the conditional association conditions on.
    pub conditioning: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionOutcome {
    pub status: Status,
    pub checks: Vec<CheckResult>,
}

impl AssumptionOutcome {
    /// Smallest p-value among the executed checks.
    pub fn p_value(&self) -> Option<f64> {
        self.checks.iter().filter_map(|c| c.p_value).reduce(f64::min)
    }
}

/// Adequacy evidence for one model, by assumption. Only the assumptions
/// listed are required of the model; an assumption is listed when at least
/// one check (possibly untested) addresses it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdequacyReport {
    pub model: String,
    pub assumptions: BTreeMap<Assumption, AssumptionOutcome>,
}

impl AdequacyReport {
    pub fn from_checks(model: impl Into<String>, checks: Vec<CheckResult>) -> Self {
        let merged = MisspecReport::from_checks(checks.clone(), Vec::new());
        let assumptions = merged
            .per_assumption
            .into_iter()
            .filter(|(a, _)| checks.iter().any(|c| c.assumption == *a))
            .map(|(a, status)| {
                let mine = checks.iter().filter(|c| c.assumption == a).cloned().collect();
                (a, AssumptionOutcome { status, checks: mine })
            })
            .collect();
        AdequacyReport { model: model.into(), assumptions }
    }

    pub fn from_misspec(model: impl Into<String>, report: &MisspecReport) -> Self {
        Self::from_checks(model, report.checks.clone())
    }

    /// Combines the reports of models estimated on separate groups: an
    /// assumption fails if it fails for any group.
    pub fn merge(model: impl Into<String>, reports: &[&MisspecReport], labels: &[&str]) -> Self {
        let checks = reports
            .iter()
            .zip(labels)
            .flat_map(|(r, l)| {
                r.checks.iter().cloned().map(move |mut c| {
                    c.name = format!("{l}: {}", c.name);
                    c
                })
            })
            .collect();
        Self::from_checks(model, checks)
    }

    pub fn with_status(&self, status: Status) -> Vec<Assumption> {
        self.assumptions.iter().filter(|(_, o)| o.status == status).map(|(a, _)| *a).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    NoReversal,
    Case1Trustworthy,
    Case2Untrustworthy,
    Indeterminate,
}

impl VerdictKind {
    pub fn describe(self) -> &'static str {
        match self {
            VerdictKind::NoReversal => "no reversal",
            VerdictKind::Case1Trustworthy => "Case 1: statistically trustworthy reversal",
            VerdictKind::Case2Untrustworthy => "Case 2: statistically untrustworthy (spurious) reversal",
            VerdictKind::Indeterminate => "indeterminate: required adequacy checks could not run",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReversalVerdict {
    pub kind: VerdictKind,
    pub pair: AssociationPair,
    pub marginal_adequacy: AdequacyReport,
    pub conditional_adequacy: AdequacyReport,
    pub rationale: String,
    pub note: Option<String>,
}

fn list(assumptions: &[Assumption]) -> String {
    assumptions.iter().map(|a| format!("[{}] {}", a.number(), a.label())).collect::<Vec<_>>().join(", ")
}

/// Classifies an association pair given the adequacy of the marginal and
/// conditional models.
///
/// Same directions mean no reversal. Otherwise a failed
/// assumption in either model makes the reversal untrustworthy, an untested
/// one leaves it indeterminate, and two adequate models with two
/// significant associations make it trustworthy.
pub fn classify(
    pair: &AssociationPair,
    marginal: &AdequacyReport,
    conditional: &AdequacyReport,
    alpha: f64,
) -> Result<ReversalVerdict> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} not in (0, 1)")));
    }
    if pair.marginal.source != marginal.model || pair.conditional.source != conditional.model {
        return Err(Error::MismatchedInputs(format!(
            "adequacy reports for `{}`/`{}` do not match associations from `{}`/`{}`",
            marginal.model, conditional.model, pair.marginal.source, pair.conditional.source
        )));
    }
    let dm = pair.marginal.direction;
    let dc = pair.conditional.direction;
    let failed_m = marginal.with_status(Status::Fail);
    let failed_c = conditional.with_status(Status::Fail);
    let untested = marginal.with_status(Status::Untested).len() + conditional.with_status(Status::Untested).len();
    let mut note = None;

    let (kind, rationale) = if dm == dc {
        let why = if dm == Direction::Zero {
            "Neither association has a direction".to_string()
        } else {
            format!("Both associations have sign {}", dm.symbol())
        };
        let mut bad = Vec::new();
        if !failed_m.is_empty() {
            bad.push(format!("the {} model (fails {})", marginal.model, list(&failed_m)));
        }
        if !failed_c.is_empty() {
            bad.push(format!("the {} model (fails {})", conditional.model, list(&failed_c)));
        }
        if !bad.is_empty() {
            note = Some(format!(
                "No reversal, but inference from {} is untrustworthy because of statistical misspecification.",
                bad.join(" and ")
            ));
        }
        (VerdictKind::NoReversal, format!("{why}; the direction does not reverse."))
    } else if !failed_m.is_empty() || !failed_c.is_empty() {
        let mut parts = Vec::new();
        if !failed_m.is_empty() {
            parts.push(format!("the {} model is statistically misspecified (fails {})", marginal.model, list(&failed_m)));
        }
        if !failed_c.is_empty() {
            parts.push(format!(
                "the {} model is statistically misspecified (fails {})",
                conditional.model,
                list(&failed_c)
            ));
        }
        let culprit = match (failed_m.is_empty(), failed_c.is_empty()) {
            (false, true) => format!("The {} association is untrustworthy", marginal.model),
            (true, false) => format!("The {} association is untrustworthy", conditional.model),
            _ => "Neither association is trustworthy".to_string(),
        };
        (
            VerdictKind::Case2Untrustworthy,
            format!("The associations differ in direction, but {}. {culprit}.", parts.join(" and ")),
        )
    } else if untested > 0 {
        let mut missing = marginal.with_status(Status::Untested);
        missing.extend(conditional.with_status(Status::Untested));
        missing.sort();
        missing.dedup();
        (
            VerdictKind::Indeterminate,
            format!("The associations differ in direction, but {} could not be tested.", list(&missing)),
        )
    } else if pair.marginal.significant(alpha) && pair.conditional.significant(alpha) {
        (
            VerdictKind::Case1Trustworthy,
            "The associations differ in direction, both are significant, and both models are statistically adequate."
                .to_string(),
        )
    } else {
        note = Some(
            "The signs differ, but a reversal requires significant associations on both sides.".into(),
        );
        let which = if pair.marginal.significant(alpha) || pair.conditional.significant(alpha) {
            "Only one of the associations is significant."
        } else {
            "Neither association is significant."
        };
        (VerdictKind::NoReversal, which.to_string())
    };

    Ok(ReversalVerdict {
        kind,
        pair: pair.clone(),
        marginal_adequacy: marginal.clone(),
        conditional_adequacy: conditional.clone(),
        rationale,
        note,
    })
}

/// p-value in the report style: `<.001` or three decimals without the
/// leading zero.
pub fn format_p(p: f64) -> String {
    if p.is_nan() {
        "n/a".into()
    } else if p < 0.0005 {
        "<.001".into()
    } else {
        format_num(p, 3)
    }
}

/// `= .028` or `< .001`, for inline use after `p`.
pub fn p_clause(p: f64) -> String {
    let f = format_p(p);
    match f.strip_prefix('<') {
        Some(rest) => format!("< {rest}"),
        None => format!("= {f}"),
    }
}

/// Fixed decimals with the leading zero dropped (`-0.167` → `-.167`).
pub fn format_num(x: f64, decimals: usize) -> String {
    let s = format!("{x:.decimals$}");
    if let Some(rest) = s.strip_prefix("0.") {
        format!(".{rest}")
    } else if let Some(rest) = s.strip_prefix("-0.") {
        if rest.chars().all(|c| c == '0') {
            format!(".{rest}")
        } else {
            format!("-.{rest}")
        }
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictSection {
    pub kind: VerdictKind,
    pub conditioning: String,
    pub rationale: String,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Side {
    pub association: Association,
    pub adequacy: AdequacyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionRow {
    pub name: String,
    pub marginal: Option<RowOutcome>,
    pub conditional: Option<RowOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowOutcome {
    pub status: Status,
    pub p_value: Option<f64>,
}

/// The versioned report document shared by every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub schema: String,
    pub verdict: Option<VerdictSection>,
    pub marginal: Option<Side>,
    pub conditional: Option<Side>,
    /// Keyed `[1]` … `[5]`.
    pub assumptions: BTreeMap<String, AssumptionRow>,
    pub narrative: Vec<String>,
    pub substantive_adequacy: String,
    pub details: serde_json::Value,
}

fn key(a: Assumption) -> String {
    format!("[{}]", a.number())
}

impl Report {
    /// A report with no verdict, e.g. for generated data.
    pub fn empty(narrative: Vec<String>, details: serde_json::Value) -> Self {
        Report {
            schema: SCHEMA.into(),
            verdict: None,
            marginal: None,
            conditional: None,
            assumptions: BTreeMap::new(),
            narrative,
            substantive_adequacy: SUBSTANTIVE.into(),
            details,
        }
    }

    pub fn from_verdict(v: &ReversalVerdict, mut narrative: Vec<String>, details: serde_json::Value) -> Self {
        let mut assumptions = BTreeMap::new();
        for a in Assumption::ALL {
            let outcome = |r: &AdequacyReport| {
                r.assumptions.get(&a).map(|o| RowOutcome { status: o.status, p_value: o.p_value() })
            };
            let (m, c) = (outcome(&v.marginal_adequacy), outcome(&v.conditional_adequacy));
            if m.is_some() || c.is_some() {
                assumptions.insert(key(a), AssumptionRow { name: a.label().into(), marginal: m, conditional: c });
            }
        }
        narrative.insert(0, v.rationale.clone());
        if let Some(n) = &v.note {
            narrative.insert(1, n.clone());
        }
        Report {
            schema: SCHEMA.into(),
            verdict: Some(VerdictSection {
                kind: v.kind,
                conditioning: v.pair.conditioning.clone(),
                rationale: v.rationale.clone(),
                note: v.note.clone(),
            }),
            marginal: Some(Side { association: v.pair.marginal.clone(), adequacy: v.marginal_adequacy.clone() }),
            conditional: Some(Side {
                association: v.pair.conditional.clone(),
                adequacy: v.conditional_adequacy.clone(),
            }),
            assumptions,
            narrative,
            substantive_adequacy: SUBSTANTIVE.into(),
            details,
        }
    }

    /// Reconstructs the verdict a report was rendered from.
    pub fn verdict(&self) -> Option<ReversalVerdict> {
        let v = self.verdict.as_ref()?;
        let (m, c) = (self.marginal.as_ref()?, self.conditional.as_ref()?);
        Some(ReversalVerdict {
            kind: v.kind,
            pair: AssociationPair {
                marginal: m.association.clone(),
                conditional: c.association.clone(),
                conditioning: v.conditioning.clone(),
            },
            marginal_adequacy: m.adequacy.clone(),
            conditional_adequacy: c.adequacy.clone(),
            rationale: v.rationale.clone(),
            note: v.note.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(v) = &self.verdict {
            out.push_str(&format!("Verdict: {}\n", v.kind.describe()));
            out.push_str(&format!("Conditioning on: {}\n", v.conditioning));
        }
        for (label, side) in [("Marginal", &self.marginal), ("Conditional", &self.conditional)] {
            if let Some(s) = side {
                let a = &s.association;
                out.push_str(&format!(
                    "{label} association ({}): {} [{}], direction {}\n",
                    a.source,
                    format_num(a.estimate, 3),
                    a.p_value.map(format_p).unwrap_or_else(|| "n/a".into()),
                    a.direction.symbol()
                ));
            }
        }
        if !self.assumptions.is_empty() {
            out.push_str("Assumptions:\n");
            let cell = |o: &Option<RowOutcome>| match o {
                None => "-".to_string(),
                Some(o) => {
                    let s = match o.status {
                        Status::Pass => "pass",
                        Status::Fail => "FAIL",
                        Status::Untested => "untested",
                    };
                    match o.p_value {
                        Some(p) => format!("{s} [{}]", format_p(p)),
                        None => s.to_string(),
                    }
                }
            };
            out.push_str(&format!("  {:<24} {:<18} {}\n", "", "marginal", "conditional"));
            for (k, row) in &self.assumptions {
                out.push_str(&format!(
                    "  {:<24} {:<18} {}\n",
                    format!("{k} {}", row.name),
                    cell(&row.marginal),
                    cell(&row.conditional)
                ));
            }
        }
        for line in &self.narrative {
            out.push_str(line);
            out.push('\n');
        }
        out.push_str(&format!("Substantive adequacy: {}\n", self.substantive_adequacy));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Text,
    Json,
}

pub fn render(report: &Report, format: Format) -> String {
    match format {
        Format::Text => report.to_text(),
        Format::Json => report.to_json(),
    }
}

/// Checks that `json` is a `reversal-report/1` document.
pub fn validate_report(json: &str) -> std::result::Result<Report, String> {
    let report: Report = serde_json::from_str(json).map_err(|e| e.to_string())?;
    if report.schema != SCHEMA {
        return Err(format!("schema `{}`, expected `{SCHEMA}`", report.schema));
    }
    if report.substantive_adequacy != SUBSTANTIVE {
        return Err("substantive adequacy must be reported as not assessed".into());
    }
    let keys: Vec<String> = Assumption::ALL.iter().map(|a| key(*a)).collect();
    if let Some(k) = report.assumptions.keys().find(|k| !keys.contains(k)) {
        return Err(format!("unknown assumption key `{k}`"));
    }
    if report.verdict.is_some() != (report.marginal.is_some() && report.conditional.is_some()) {
        return Err("a verdict needs both marginal and conditional sides".into());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(a: Assumption, status: Status, p: f64) -> CheckResult {
        CheckResult {
            name: format!("{} check", a.label()),
            assumption: a,
            statistic: Some(1.0),
            p_value: Some(p),
            status,
            note: None,
        }
    }

    fn adequate(model: &str) -> AdequacyReport {
        AdequacyReport::from_checks(model, Assumption::ALL.iter().map(|&a| check(a, Status::Pass, 0.4)).collect())
    }

    fn pair(m: f64, pm: f64, c: f64, pc: f64) -> AssociationPair {
        AssociationPair {
            marginal: Association::new("aggregated", m, Some(pm)),
            conditional: Association::new("disaggregated", c, Some(pc)),
            conditioning: "x2".into(),
        }
    }

    #[test]
    fn formatting() {
        assert_eq!(format_p(0.0004), "<.001");
        assert_eq!(format_p(0.0005), ".001");
        assert_eq!(format_p(0.985), ".985");
        assert_eq!(format_p(1.0), "1.000");
        assert_eq!(format_num(-0.1666, 3), "-.167");
        assert_eq!(format_num(-0.0001, 3), ".000");
        assert_eq!(format_num(45.229, 3), "45.229");
    }

    #[test]
    fn case1_when_adequate_and_significant() {
        let v = classify(&pair(0.5, 0.001, -0.2, 0.001), &adequate("aggregated"), &adequate("disaggregated"), 0.05)
            .unwrap();
        assert_eq!(v.kind, VerdictKind::Case1Trustworthy);
    }

    #[test]
    fn case2_names_failed_model() {
        let mut checks: Vec<CheckResult> = Assumption::ALL.iter().map(|&a| check(a, Status::Pass, 0.4)).collect();
        checks[4] = check(Assumption::TInvariance, Status::Fail, 1e-5);
        let bad = AdequacyReport::from_checks("aggregated", checks);
        let v = classify(&pair(-0.2, 0.04, 0.5, 0.001), &bad, &adequate("disaggregated"), 0.05).unwrap();
        assert_eq!(v.kind, VerdictKind::Case2Untrustworthy);
        assert!(v.rationale.contains("aggregated model is statistically misspecified"));
        assert!(v.rationale.contains("[5] t-invariance"));
    }

    #[test]
    fn same_direction_is_never_a_reversal() {
        let mut checks: Vec<CheckResult> = Assumption::ALL.iter().map(|&a| check(a, Status::Pass, 0.4)).collect();
        checks[0] = check(Assumption::Normality, Status::Fail, 1e-5);
        let bad = AdequacyReport::from_checks("aggregated", checks);
        let v = classify(&pair(0.5, 0.001, 0.2, 0.001), &bad, &adequate("disaggregated"), 0.05).unwrap();
        assert_eq!(v.kind, VerdictKind::NoReversal);
    }

    #[test]
    fn insignificant_side_gives_no_reversal_with_note() {
        let v = classify(&pair(0.5, 0.3, -0.2, 0.001), &adequate("aggregated"), &adequate("disaggregated"), 0.05)
            .unwrap();
        assert_eq!(v.kind, VerdictKind::NoReversal);
        assert!(v.note.is_some());
    }

    #[test]
    fn untested_gives_indeterminate() {
        let mut checks: Vec<CheckResult> = Assumption::ALL.iter().map(|&a| check(a, Status::Pass, 0.4)).collect();
        checks[3].status = Status::Untested;
        checks[3].p_value = None;
        let partial = AdequacyReport::from_checks("aggregated", checks);
        let v = classify(&pair(0.5, 0.001, -0.2, 0.001), &partial, &adequate("disaggregated"), 0.05).unwrap();
        assert_eq!(v.kind, VerdictKind::Indeterminate);
    }

    #[test]
    fn mismatched_sources() {
        let r = classify(&pair(0.5, 0.001, -0.2, 0.001), &adequate("other"), &adequate("disaggregated"), 0.05);
        assert!(matches!(r, Err(Error::MismatchedInputs(_))));
    }

    #[test]
    fn json_round_trip() {
        let v = classify(&pair(0.5, 0.001, -0.2, 0.001), &adequate("aggregated"), &adequate("disaggregated"), 0.05)
            .unwrap();
        let report = Report::from_verdict(&v, vec!["extra".into()], serde_json::json!({"n": 3}));
        let parsed = validate_report(&report.to_json()).unwrap();
        assert_eq!(parsed, report);
        assert_eq!(parsed.verdict().unwrap(), v);
        assert!(report.to_text().contains("Case 1"));
        assert!(validate_report("{\"schema\": \"other\"}").is_err());
        let empty = Report::empty(vec![], serde_json::Value::Null);
        assert!(validate_report(&empty.to_json()).is_ok());
    }
}
