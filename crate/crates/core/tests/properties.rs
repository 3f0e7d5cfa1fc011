use proptest::prelude::*;

use reversal_core::bernoulli::{
    check_event_reversal, homogeneity_test, ContingencyTable, EventProbabilityTriple, StratifiedTables, Stratum,
};
use reversal_core::distributions::{normal_sf, tail_prob, Distribution, Sides};
use reversal_core::linalg::{least_squares, Matrix};
use reversal_core::misspec::{detrend, Assumption, CheckResult, Status};
use reversal_core::parameterization::{
    check_reversal_conditions, derive_full_params, derive_simple_params, matrix_regression_params, JointMoments,
};
use reversal_core::regression::{fit, Dataset, ModelSpec};
use reversal_core::stats::{correlation, Series};
use reversal_core::verdict::{classify, AdequacyReport, Association, AssociationPair, VerdictKind};

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Σ = L Lᵀ + δI from a random lower-triangular L.
fn pd_moments() -> impl Strategy<Value = JointMoments> {
    (prop::array::uniform3(-10.0..10.0f64), prop::array::uniform6(-3.0..3.0f64), 0.05..1.0f64).prop_filter_map(
        "not positive definite",
        |(mu, l, delta)| {
            let lm = [[l[0], 0.0, 0.0], [l[1], l[2], 0.0], [l[3], l[4], l[5]]];
            let mut s = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    s[i][j] = (0..3).map(|k| lm[i][k] * lm[j][k]).sum::<f64>();
                }
                s[i][i] += delta;
            }
            JointMoments::new(mu, s).ok()
        },
    )
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn dataset(cols: &[(&str, &[f64])]) -> Dataset {
    let series = cols.iter().map(|(n, v)| Series::new(*n, v.to_vec()).unwrap()).collect();
    Dataset::new(series, Vec::new()).unwrap()
}

fn table(c: [i64; 4]) -> ContingencyTable {
    ContingencyTable::with_groups("g0", "g1", [[c[0], c[1]], [c[2], c[3]]]).unwrap()
}

fn check(assumption: Assumption, status: Status) -> CheckResult {
    CheckResult { name: format!("{assumption:?}"), assumption, statistic: None, p_value: Some(0.5), status, note: None }
}

fn status() -> impl Strategy<Value = Status> {
    prop_oneof![Just(Status::Pass), Just(Status::Fail), Just(Status::Untested)]
}

fn assumption() -> impl Strategy<Value = Assumption> {
    (0..5usize).prop_map(|i| Assumption::ALL[i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn correlation_is_affine_invariant(
        xy in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 3..40),
        a in prop_oneof![-5.0..-0.1f64, 0.1..5.0f64],
        b in -10.0..10.0f64,
        c in prop_oneof![-5.0..-0.1f64, 0.1..5.0f64],
        d in -10.0..10.0f64,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        let Some(r) = correlation(&x, &y) else { return Ok(()) };
        let xt: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let yt: Vec<f64> = y.iter().map(|v| c * v + d).collect();
        let rt = correlation(&xt, &yt).unwrap();
        prop_assert!((rt - (a * c).signum() * r).abs() < 1e-9);
        prop_assert!(r.abs() <= 1.0);
    }

    #[test]
    fn least_squares_matches_cramer(
        rows in prop::collection::vec(prop::array::uniform3(-5.0..5.0f64), 4..=6),
        y in prop::collection::vec(-20.0..20.0f64, 6),
        p in 1usize..=3,
    ) {
        let n = rows.len();
        let x: Vec<Vec<f64>> = rows.iter().map(|r| r[..p].to_vec()).collect();
        let y = &y[..n];
        // Normal equations padded to 3×3 with an identity block.
        let mut a = [[0.0; 3]; 3];
        let mut rhs = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] = if i < p && j < p {
                    (0..n).map(|t| x[t][i] * x[t][j]).sum()
                } else if i == j {
                    1.0
                } else {
                    0.0
                };
            }
            if i < p {
                rhs[i] = (0..n).map(|t| x[t][i] * y[t]).sum();
            }
        }
        let det = det3(&a);
        let scale = (0..3).map(|i| a[i][i]).product::<f64>();
        prop_assume!(det.abs() > 1e-3 * scale);
        let sol = least_squares(&Matrix::from_rows(&x).unwrap(), y).unwrap();
        for j in 0..p {
            let mut aj = a;
            for i in 0..3 {
                aj[i][j] = rhs[i];
            }
            let cramer = det3(&aj) / det;
            prop_assert!(rel_close(sol.coefficients[j], cramer, 1e-7), "{} vs {}", sol.coefficients[j], cramer);
        }
    }

    #[test]
    fn tails_are_monotone(s in 0.0..30.0f64, ds in 0.01..5.0f64, df in 1.0..200.0f64, df2 in 1.0..200.0f64) {
        for dist in [
            Distribution::StudentT { df },
            Distribution::FisherF { df1: df, df2 },
            Distribution::ChiSquare { df },
            Distribution::Normal,
        ] {
            let lo = tail_prob(dist, s, Sides::One).unwrap();
            let hi = tail_prob(dist, s + ds, Sides::One).unwrap();
            prop_assert!((0.0..=1.0).contains(&lo));
            prop_assert!(hi <= lo + 1e-15, "{dist:?}: {hi} > {lo}");
        }
    }

    #[test]
    fn symmetric_tails(t in -20.0..20.0f64, df in 1.0..300.0f64) {
        let two = tail_prob(Distribution::StudentT { df }, t, Sides::Two).unwrap();
        let mirrored = tail_prob(Distribution::StudentT { df }, -t, Sides::Two).unwrap();
        prop_assert!((two - mirrored).abs() < 1e-14);
        let f = tail_prob(Distribution::FisherF { df1: 1.0, df2: df }, t * t, Sides::One).unwrap();
        prop_assert!((two - f).abs() < 1e-10 * two.max(1e-300) + 1e-14, "t {two} vs F {f}");
        prop_assert!((normal_sf(t) + normal_sf(-t) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn omitted_variable_identity(m in pd_moments()) {
        let full = derive_full_params(&m).unwrap();
        let simple = derive_simple_params(&m).unwrap();
        let s = &m.sigma;
        let implied = full.beta1 + full.beta2 * s[1][2] / s[1][1];
        prop_assert!(rel_close(simple.alpha1, implied, 1e-10));
    }

    #[test]
    fn matrix_formula_agrees(m in pd_moments()) {
        let full = derive_full_params(&m).unwrap();
        let simple = derive_simple_params(&m).unwrap();
        let (b0, b, s2) = matrix_regression_params(&m.mu, &m.covariance()).unwrap();
        prop_assert!(rel_close(full.beta0, b0, 1e-12));
        prop_assert!(rel_close(full.beta1, b[0], 1e-12));
        prop_assert!(rel_close(full.beta2, b[1], 1e-12));
        prop_assert!(rel_close(full.sigma_u2, s2, 1e-12));
        let slack = 1e-12 * m.sigma[0][0];
        prop_assert!(full.sigma_u2 <= simple.sigma_eps2 + slack);
        prop_assert!(simple.sigma_eps2 <= m.sigma[0][0] + slack);
    }

    #[test]
    fn reversal_conditions_predict_sign(r12 in 0.01..0.99f64, r13 in -0.99..0.99f64, r23 in -0.99..0.99f64) {
        let c = check_reversal_conditions(r12, r13, r23).unwrap();
        prop_assert_eq!(c.reversal_predicted, c.same_sign && c.product_exceeds && c.det_positive);
        let Ok(m) = JointMoments::from_correlations(r12, r13, r23) else { return Ok(()) };
        // Too close to the boundary to call the sign.
        prop_assume!((r12 - r13 * r23).abs() > 1e-9);
        let beta1 = derive_full_params(&m).unwrap().beta1;
        prop_assert_eq!(c.reversal_predicted, beta1.signum() != r12.signum());
    }

    #[test]
    fn frisch_waugh(rows in prop::collection::vec(prop::array::uniform3(-10.0..10.0f64), 8..40)) {
        let y: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let x1: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        let x2: Vec<f64> = rows.iter().map(|r| r[2] + 0.3 * r[1]).collect();
        let data = dataset(&[("y", &y), ("x1", &x1), ("x2", &x2)]);
        let Ok(full) = fit(&data, &ModelSpec::new("y", ["x1", "x2"])) else { return Ok(()) };
        let ry = fit(&data, &ModelSpec::new("y", ["x2"])).unwrap().residuals;
        let rx = fit(&data, &ModelSpec::new("x1", ["x2"])).unwrap().residuals;
        let partial = fit(&dataset(&[("ry", &ry), ("rx", &rx)]), &ModelSpec::new("ry", ["rx"])).unwrap();
        prop_assert!(rel_close(full.coefficients[1], partial.coefficients[1], 1e-8));
        let short = fit(&data, &ModelSpec::new("y", ["x1"])).unwrap();
        prop_assert!(full.r2 >= short.r2 - 1e-12);
    }

    #[test]
    fn detrending_is_idempotent(v in prop::collection::vec(-100.0..100.0f64, 10..60), degree in 0usize..4) {
        let once = detrend(&Series::new("v", v).unwrap(), degree).unwrap();
        let twice = detrend(&once, degree).unwrap();
        let scale = once.values().iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for (a, b) in once.values().iter().zip(twice.values()) {
            prop_assert!((a - b).abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn homogeneity_ignores_stratum_order(
        counts in prop::collection::vec(prop::array::uniform4(1i64..60), 2..6),
        rotate in 0usize..6,
    ) {
        let build = |order: &[usize]| {
            let strata: Vec<Stratum> = order
                .iter()
                .map(|&i| Stratum { name: format!("s{i}"), table: table(counts[i]) })
                .collect();
            let mut agg = [0i64; 4];
            for c in &counts {
                for k in 0..4 {
                    agg[k] += c[k];
                }
            }
            StratifiedTables::new(table(agg), strata, true).unwrap()
        };
        let ids: Vec<usize> = (0..counts.len()).collect();
        let mut shuffled = ids.clone();
        shuffled.rotate_left(rotate % ids.len());
        shuffled.reverse();
        for col in 0..2 {
            let a = homogeneity_test(&build(&ids), col, 0.05).unwrap();
            let b = homogeneity_test(&build(&shuffled), col, 0.05).unwrap();
            prop_assert!(rel_close(a.chi2, b.chi2, 1e-12));
            prop_assert_eq!(a.df, b.df);
        }
    }

    #[test]
    fn event_reversal_is_symmetric_in_b(p in prop::array::uniform6(0.0..1.0f64)) {
        let t = EventProbabilityTriple {
            p_a_given_b: p[0],
            p_a_given_not_b: p[1],
            given_c: (p[2], p[3]),
            given_not_c: (p[4], p[5]),
        };
        let swapped = EventProbabilityTriple {
            p_a_given_b: p[1],
            p_a_given_not_b: p[0],
            given_c: (p[3], p[2]),
            given_not_c: (p[5], p[4]),
        };
        prop_assert_eq!(check_event_reversal(&t), check_event_reversal(&swapped));
    }

    #[test]
    fn classify_ignores_check_order_and_never_trusts_a_failure(
        marg in prop::collection::vec((assumption(), status()), 0..8),
        cond in prop::collection::vec((assumption(), status()), 0..8),
        em in -1.0..1.0f64,
        ec in -1.0..1.0f64,
        pm in 0.0..0.2f64,
        pc in 0.0..0.2f64,
    ) {
        let pair = AssociationPair {
            marginal: Association::new("m", em, Some(pm)),
            conditional: Association::new("c", ec, Some(pc)),
            conditioning: "z".into(),
        };
        let report = |model: &str, v: &[(Assumption, Status)]| {
            AdequacyReport::from_checks(model, v.iter().map(|&(a, s)| check(a, s)).collect())
        };
        let mut marg_rev = marg.clone();
        marg_rev.reverse();
        let mut cond_rev = cond.clone();
        cond_rev.reverse();
        let a = classify(&pair, &report("m", &marg), &report("c", &cond), 0.05).unwrap();
        let b = classify(&pair, &report("m", &marg_rev), &report("c", &cond_rev), 0.05).unwrap();
        prop_assert_eq!(a.kind, b.kind);
        let any_fail = marg.iter().chain(&cond).any(|&(_, s)| s == Status::Fail);
        if any_fail {
            prop_assert_ne!(a.kind, VerdictKind::Case1Trustworthy);
        }
    }
}
