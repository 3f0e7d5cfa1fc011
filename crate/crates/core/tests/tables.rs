use reversal_core::analysis::{analyze_table, TableInput};
use reversal_core::bernoulli::{
    cmh_test, homogeneity_test, two_proportion_test, Favors, StratifiedTables,
};
use reversal_core::verdict::VerdictKind;

fn fixture(name: &str) -> StratifiedTables {
    let path = format!("{}/../../fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap();
    TableInput::from_json(&text).unwrap().into_tables().unwrap()
}

fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol * b.abs().max(1.0), "{a} vs {b}");
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

// Reference values from scipy.stats (chi2_contingency with correction=False,
// chi2.sf) and a hand-coded Mantel–Haenszel statistic without continuity
// correction.
#[test]
fn berkeley_reference_statistics() {
    let st = fixture("berkeley.json");
    let h0 = homogeneity_test(&st, 0, 0.05).unwrap();
    let h1 = homogeneity_test(&st, 1, 0.05).unwrap();
    close(h0.chi2, 456.152675491127, 1e-10);
    close(h1.chi2, 243.41129138706165, 1e-10);
    assert_eq!((h0.df, h1.df), (5, 5));
    assert!(!h0.id_holds && !h1.id_holds);

    let cmh = cmh_test(&st, 0.05).unwrap();
    close(cmh.stat, 3.8127263182740756, 1e-10);
    close(cmh.p_value, 0.05086459534581822, 1e-9);
    close(cmh.common_odds_ratio.unwrap(), 0.8528, 1e-3);
    assert!(!cmh.reject);

    let agg = st.aggregate();
    let z = two_proportion_test(&agg.estimate(0), &agg.estimate(1), 0.05).unwrap();
    close(z.z, 10.547497659554697, 1e-10);
    assert!(z.reject);
}

#[test]
fn berkeley_rates_and_verdict() {
    let st = fixture("berkeley.json");
    let agg = st.aggregate();
    assert_eq!(round2(agg.estimate(0).theta_hat), 0.44);
    assert_eq!(round2(agg.estimate(1).theta_hat), 0.35);
    let rates = [(0.62, 0.82), (0.63, 0.68), (0.37, 0.34), (0.33, 0.35), (0.28, 0.32), (0.06, 0.07)];
    for (s, (m, f)) in st.strata().iter().zip(rates) {
        assert_eq!(round2(s.table.estimate(0).theta_hat), m, "{}", s.name);
        assert_eq!(round2(s.table.estimate(1).theta_hat), f, "{}", s.name);
    }

    let a = analyze_table(&st, 0.05).unwrap();
    assert!(!a.aggregate.aggregate_trustworthy);
    assert_eq!(a.aggregate.aggregate_favors, Favors::First);
    assert!(a.aggregate.reversal_present);
    let flipped: Vec<&str> = a.aggregate.per_stratum.iter().filter(|s| s.flips).map(|s| s.name.as_str()).collect();
    assert_eq!(flipped, ["A", "B", "D", "E", "F"]);
    assert_eq!(a.verdict.kind, VerdictKind::Case2Untrustworthy);
    let text = a.report().to_text();
    assert!(text.contains("C: Male .37 vs Female .34 (favors Male)"), "{text}");
    assert!(text.contains("F: Male .06 vs Female .07 (favors Female)"), "{text}");
}

#[test]
fn lindley_novick_reference_statistics() {
    let st = fixture("lindley_novick.json");
    let h0 = homogeneity_test(&st, 0, 0.05).unwrap();
    let h1 = homogeneity_test(&st, 1, 0.05).unwrap();
    close(h0.chi2, 4.8, 1e-12);
    close(h0.p_value, 0.028459736916310638, 1e-9);
    close(h1.chi2, 5.0, 1e-12);
    close(h1.p_value, 0.025347318677468325, 1e-9);

    let cmh = cmh_test(&st, 0.05).unwrap();
    close(cmh.stat, 0.6743515850144092, 1e-10);
    close(cmh.p_value, 0.4115385479232784, 1e-9);
    close(cmh.common_odds_ratio.unwrap(), 0.615, 1e-3);

    let agg = st.aggregate();
    let z = two_proportion_test(&agg.estimate(0), &agg.estimate(1), 0.05).unwrap();
    close(z.z, 0.8989331499509892, 1e-10);
    close(z.p_value, 0.3686882693617817, 1e-9);
}

#[test]
fn lindley_novick_rates_and_pattern() {
    let st = fixture("lindley_novick.json");
    let agg = st.aggregate();
    assert_eq!(round2(agg.estimate(0).theta_hat), 0.5);
    assert_eq!(round2(agg.estimate(1).theta_hat), 0.4);
    let short = &st.strata()[0].table;
    let tall = &st.strata()[1].table;
    assert_eq!((round2(short.estimate(0).theta_hat), round2(short.estimate(1).theta_hat)), (0.2, 0.3));
    assert_eq!((round2(tall.estimate(0).theta_hat), round2(tall.estimate(1).theta_hat)), (0.6, 0.7));
    assert_eq!(st.convexity_gap(), 0.0);

    let a = analyze_table(&st, 0.05).unwrap();
    assert_eq!(a.pattern_holds, Some(true));
    // The signs reverse and the aggregate is not identically distributed
    // across strata.
    assert_eq!(a.verdict.kind, VerdictKind::Case2Untrustworthy);
    assert!(a.verdict.rationale.contains("The aggregate table association is untrustworthy"), "{}", a.verdict.rationale);
}
