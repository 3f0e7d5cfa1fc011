//! Tail probabilities for the t, F, χ² and standard Normal distributions.
//!
//! Everything reduces to the regularized incomplete beta and gamma
//! functions, evaluated with Lentz's continued fraction (or the power series
//! for the lower gamma tail when it converges faster).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Distribution {
    StudentT { df: f64 },
    FisherF { df1: f64, df2: f64 },
    ChiSquare { df: f64 },
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sides {
    /// Upper tail, `P(X > stat)`.
    One,
    /// `P(|X| > |stat|)` for symmetric laws; twice the smaller tail otherwise.
    Two,
}

/// Tail probability of `stat` under `dist`.
pub fn tail_prob(dist: Distribution, stat: f64, sides: Sides) -> Result<f64> {
    if !stat.is_finite() {
        return Err(Error::NonFiniteInput("statistic".into()));
    }
    let check_df = |df: f64| {
        if df.is_finite() && df >= 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidDegreesOfFreedom(format!("{df} (must be >= 1)")))
        }
    };
    let p = match dist {
        Distribution::Normal => match sides {
            Sides::One => normal_sf(stat),
            Sides::Two => 2.0 * normal_sf(stat.abs()),
        },
        Distribution::StudentT { df } => {
            check_df(df)?;
            match sides {
                Sides::One => student_t_sf(stat, df),
                Sides::Two => 2.0 * student_t_sf(stat.abs(), df),
            }
        }
        Distribution::FisherF { df1, df2 } => {
            check_df(df1)?;
            check_df(df2)?;
            let upper = fisher_f_sf(stat, df1, df2);
            match sides {
                Sides::One => upper,
                Sides::Two => 2.0 * upper.min(1.0 - upper),
            }
        }
        Distribution::ChiSquare { df } => {
            check_df(df)?;
            let upper = chi_square_sf(stat, df);
            match sides {
                Sides::One => upper,
                Sides::Two => 2.0 * upper.min(1.0 - upper),
            }
        }
    };
    Ok(p.clamp(0.0, 1.0))
}

/// `P(Z > z)` for a standard Normal.
pub fn normal_sf(z: f64) -> f64 {
    if z >= 0.0 {
        0.5 * erfc_nonneg(z / std::f64::consts::SQRT_2)
    } else {
        1.0 - 0.5 * erfc_nonneg(-z / std::f64::consts::SQRT_2)
    }
}

fn erfc_nonneg(x: f64) -> f64 {
    // erfc(x) = Q(1/2, x²)
    if x == 0.0 {
        1.0
    } else {
        gamma_q(0.5, x * x)
    }
}

fn student_t_sf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let half = 0.5 * beta_inc(0.5 * df, 0.5, x);
    if t >= 0.0 {
        half
    } else {
        1.0 - half
    }
}

fn fisher_f_sf(f: f64, df1: f64, df2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    beta_inc(0.5 * df2, 0.5 * df1, df2 / (df2 + df1 * f))
}

fn chi_square_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(0.5 * df, 0.5 * x)
}

const EPS: f64 = 1e-15;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 100_000;

/// ln Γ(x) for x > 0 (Lanczos, g = 7, nine terms).
pub(crate) fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta I_x(a, b).
pub(crate) fn beta_inc(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized upper incomplete gamma Q(a, x).
pub(crate) fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_cf(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_q_cf(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}
