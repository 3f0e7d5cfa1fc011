//! Regression parameters implied by the joint moments of `(y, X₁, X₂)`, and
//! the conditions under which the partial slope on `X₁` reverses the sign of
//! the simple correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Mean vector and covariance matrix of `(y, X₁, X₂)`, in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointMoments {
    pub mu: [f64; 3],
    pub sigma: [[f64; 3]; 3],
}

impl JointMoments {
    /// Validated constructor: symmetric, positive diagonal, positive definite.
    pub fn new(mu: [f64; 3], sigma: [[f64; 3]; 3]) -> Result<Self> {
        let m = JointMoments { mu, sigma };
        m.validate()?;
        Ok(m)
    }

    /// Zero means, unit variances and the given correlations.
    pub fn from_correlations(rho12: f64, rho13: f64, rho23: f64) -> Result<Self> {
        for r in [rho12, rho13, rho23] {
            if !(-1.0..=1.0).contains(&r) {
                return Err(Error::OutOfRangeCorrelation(r));
            }
        }
        JointMoments::new(
            [0.0; 3],
            [[1.0, rho12, rho13], [rho12, 1.0, rho23], [rho13, rho23, 1.0]],
        )
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sigma;
        if self.mu.iter().chain(s.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("joint moments".into()));
        }
        if (0..3).any(|i| s[i][i] <= 0.0) {
            return Err(Error::NonPositiveVariance);
        }
        let trace = s[0][0] + s[1][1] + s[2][2];
        let m = self.covariance();
        if !m.is_symmetric(1e-12 * trace) {
            return Err(Error::NotPositiveDefinite("covariance matrix is not symmetric".into()));
        }
        // Minor of order k scales like trace^k.
        for k in 1..=3 {
            let minor = m.leading_minor(k);
            if minor <= 1e-12 * trace.powi(k as i32) {
                return Err(Error::NotPositiveDefinite(format!(
                    "leading minor of order {k} is {minor:.3e}"
                )));
            }
        }
        Ok(())
    }

    pub fn covariance(&self) -> Matrix {
        Matrix::from_rows(&self.sigma.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
            .expect("3x3")
    }

    /// Correlations `(ρ₁₂, ρ₁₃, ρ₂₃)`.
    pub fn correlations(&self) -> (f64, f64, f64) {
        let s = &self.sigma;
        (
            s[0][1] / (s[0][0] * s[1][1]).sqrt(),
            s[0][2] / (s[0][0] * s[2][2]).sqrt(),
            s[1][2] / (s[1][1] * s[2][2]).sqrt(),
        )
    }
}

/// Parameters of `E(y | x₁, x₂) = β₀ + β₁x₁ + β₂x₂`, `Var(y | x₁, x₂) = σ²_u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullRegressionParams {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub sigma_u2: f64,
}

/// Parameters of `E(y | x₁) = α₀ + α₁x₁`, `Var(y | x₁) = σ²_ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimpleRegressionParams {
    pub alpha0: f64,
    pub alpha1: f64,
    pub sigma_eps2: f64,
}

pub fn derive_full_params(m: &JointMoments) -> Result<FullRegressionParams> {
    let s = &m.sigma;
    let det = s[1][1] * s[2][2] - s[1][2] * s[1][2];
    if !(det > 1e-12 * (s[1][1] * s[2][2]).abs()) {
        return Err(Error::SingularRegressorCovariance);
    }
    let beta1 = (s[0][1] * s[2][2] - s[0][2] * s[1][2]) / det;
    let beta2 = (s[0][2] * s[1][1] - s[0][1] * s[1][2]) / det;
    let beta0 = m.mu[0] - beta1 * m.mu[1] - beta2 * m.mu[2];
    let sigma_u2 = s[0][0] - s[0][1] * beta1 - s[0][2] * beta2;
    if !(sigma_u2 > 0.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "implied conditional variance {sigma_u2:.3e} is not positive"
        )));
    }
    Ok(FullRegressionParams { beta0, beta1, beta2, sigma_u2 })
}

pub fn derive_simple_params(m: &JointMoments) -> Result<SimpleRegressionParams> {
    let s = &m.sigma;
    if !(s[1][1] > 0.0) {
        return Err(Error::ZeroRegressorVariance);
    }
    let alpha1 = s[0][1] / s[1][1];
    Ok(SimpleRegressionParams {
        alpha0: m.mu[0] - alpha1 * m.mu[1],
        alpha1,
        sigma_eps2: s[0][0] - s[0][1] * s[0][1] / s[1][1],
    })
}

/// Population regression of the first variable on the rest, for any number
/// of regressors: `β = Cov(X)⁻¹ Cov(X, y)`, `β₀ = μ_y − βᵀμ_X`,
/// `σ² = Var(y) − Cov(X, y)ᵀ Cov(X)⁻¹ Cov(X, y)`.
///
/// Returns `(β₀, β, σ²)`.
pub fn matrix_regression_params(mu: &[f64], sigma: &Matrix) -> Result<(f64, Vec<f64>, f64)> {
    let k = mu.len();
    if k < 2 || sigma.rows() != k || sigma.cols() != k {
        return Err(Error::InvalidSpec("moment dimensions do not agree".into()));
    }
    let p = k - 1;
    let mut sxx = Matrix::zeros(p, p);
    let mut sxy = vec![0.0; p];
    for i in 0..p {
        sxy[i] = sigma[(i + 1, 0)];
        for j in 0..p {
            sxx[(i, j)] = sigma[(i + 1, j + 1)];
        }
    }
    let beta = sxx.solve(&sxy).ok_or(Error::SingularRegressorCovariance)?;
    let beta0 = mu[0] - beta.iter().zip(&mu[1..]).map(|(b, m)| b * m).sum::<f64>();
    let sigma2 = sigma[(0, 0)] - sxy.iter().zip(&beta).map(|(c, b)| c * b).sum::<f64>();
    Ok((beta0, beta, sigma2))
}

/// Correlation implied by a simple-regression slope: `ρ₁₂ = α₁ √(σ₂₂/σ₁₁)`.
pub fn corr_from_slope(alpha1: f64, sigma11: f64, sigma22: f64) -> Result<f64> {
    if !(sigma11 > 0.0 && sigma22 > 0.0) {
        return Err(Error::NonPositiveVariance);
    }
    Ok(alpha1 * (sigma22 / sigma11).sqrt())
}

/// Evaluation of the sign-reversal conditions for a correlation triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReversalConditions {
    pub rho12: f64,
    pub rho13: f64,
    pub rho23: f64,
    /// ρ₁₃ρ₂₃ has the sign of ρ₁₂ (for ρ₁₂ > 0: ρ₁₃ and ρ₂₃ share a sign).
    pub same_sign: bool,
    /// |ρ₁₃ρ₂₃| > |ρ₁₂| in the direction of ρ₁₂ (for ρ₁₂ > 0: ρ₁₃ρ₂₃ > ρ₁₂).
    pub product_exceeds: bool,
    /// Determinant of the correlation matrix of `(y, X₁, X₂)`.
    pub corr_det: f64,
    pub det_positive: bool,
    pub reversal_predicted: bool,
}

/// Checks whether the partial slope of `y` on `X₁` given `X₂` has the
/// opposite sign to `ρ₁₂`. Works for either sign of `ρ₁₂`; a zero `ρ₁₂`
/// has no direction to reverse.
pub fn check_reversal_conditions(rho12: f64, rho13: f64, rho23: f64) -> Result<ReversalConditions> {
    for r in [rho12, rho13, rho23] {
        if !(-1.0..=1.0).contains(&r) {
            return Err(Error::OutOfRangeCorrelation(r));
        }
    }
    let product = rho13 * rho23;
    let sign = if rho12 > 0.0 {
        1.0
    } else if rho12 < 0.0 {
        -1.0
    } else {
        0.0
    };
    let same_sign = sign != 0.0 && product * sign > 0.0;
    let product_exceeds = sign != 0.0 && sign * product > sign * rho12;
    let corr_det = 1.0 - rho12 * rho12 - rho13 * rho13 - rho23 * rho23 + 2.0 * rho12 * rho13 * rho23;
    let det_positive = corr_det > 0.0;
    Ok(ReversalConditions {
        rho12,
        rho13,
        rho23,
        same_sign,
        product_exceeds,
        corr_det,
        det_positive,
        reversal_predicted: same_sign && product_exceeds && det_positive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn example_one_positive() {
        let m = JointMoments::from_correlations(0.5, 0.7, 0.8).unwrap();
        let p = derive_full_params(&m).unwrap();
        assert!(close(p.beta1, -0.06 / 0.36, 1e-12));
        assert!(close(p.beta2, 0.3 / 0.36, 1e-12));
        assert!(close(p.sigma_u2, 0.5, 1e-12));
        assert!(close(p.beta1, -0.167, 5e-4) && close(p.beta2, 0.833, 5e-4));
    }

    #[test]
    fn example_one_negative() {
        let m = JointMoments::from_correlations(0.5, -0.7, -0.8).unwrap();
        let p = derive_full_params(&m).unwrap();
        assert!(close(p.beta1, -0.167, 5e-4));
        assert!(close(p.beta2, -0.833, 5e-4));
        assert!(close(p.sigma_u2, 0.5, 1e-12));
    }

    #[test]
    fn block_diagonal_reduces_to_simple_slope() {
        let m = JointMoments::new([1.0, 2.0, 3.0], [[4.0, 1.2, 0.0], [1.2, 2.0, 0.0], [0.0, 0.0, 5.0]])
            .unwrap();
        let full = derive_full_params(&m).unwrap();
        let simple = derive_simple_params(&m).unwrap();
        assert!(close(full.beta1, 0.6, 1e-15) && close(simple.alpha1, 0.6, 1e-15));
        assert_eq!(full.beta2, 0.0);
        assert!(close(full.beta0, simple.alpha0, 1e-15));
    }

    #[test]
    fn simple_params() {
        let m = JointMoments::from_correlations(0.5, 0.0, 0.0).unwrap();
        let s = derive_simple_params(&m).unwrap();
        assert!(close(s.alpha1, 0.5, 1e-15));
        assert!(close(s.sigma_eps2, 0.75, 1e-15));
        let m = JointMoments::new([0.0; 3], [[3.0, 0.0, 0.1], [0.0, 2.0, 0.2], [0.1, 0.2, 1.0]]).unwrap();
        let s = derive_simple_params(&m).unwrap();
        assert_eq!(s.alpha1, 0.0);
        assert_eq!(s.sigma_eps2, 3.0);
    }

    #[test]
    fn slope_to_correlation() {
        let r = corr_from_slope(0.419, 2.137_f64.powi(2), 4.854_f64.powi(2)).unwrap();
        assert!(close(r, 0.952, 5e-4), "{r}");
        assert_eq!(corr_from_slope(0.0, 1.0, 2.0).unwrap(), 0.0);
        assert_eq!(corr_from_slope(1.0, 3.0, 3.0).unwrap(), 1.0);
        assert!(corr_from_slope(-0.3, 1.0, 4.0).unwrap() < 0.0);
        assert_eq!(corr_from_slope(1.0, 0.0, 1.0), Err(Error::NonPositiveVariance));
    }

    #[test]
    fn conditions_example_one() {
        let c = check_reversal_conditions(0.5, 0.7, 0.8).unwrap();
        assert!(c.same_sign && c.product_exceeds && c.det_positive && c.reversal_predicted);
        assert!(close(c.corr_det, 0.18, 1e-12));
    }

    #[test]
    fn conditions_mixed_sign() {
        let c = check_reversal_conditions(0.5, 0.7, -0.8).unwrap();
        assert!(!c.same_sign && !c.reversal_predicted);
        assert!(close(c.corr_det, -0.94, 1e-12) && !c.det_positive);
        assert!(matches!(
            JointMoments::from_correlations(0.5, 0.7, -0.8),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn conditions_no_third_variable() {
        let c = check_reversal_conditions(0.5, 0.0, 0.0).unwrap();
        assert!(!c.reversal_predicted);
        assert!(matches!(
            check_reversal_conditions(1.2, 0.0, 0.0),
            Err(Error::OutOfRangeCorrelation(_))
        ));
    }

    #[test]
    fn negative_marginal_correlation_reverses_too() {
        let c = check_reversal_conditions(-0.5, 0.7, -0.8).unwrap();
        assert!(c.reversal_predicted);
        let p = derive_full_params(&JointMoments::from_correlations(-0.5, 0.7, -0.8).unwrap()).unwrap();
        assert!(p.beta1 > 0.0);
    }

    #[test]
    fn rejects_indefinite_and_singular() {
        // ρ₂₃ = 1 makes the regressor block singular.
        assert!(matches!(
            JointMoments::from_correlations(0.5, 0.5, 1.0),
            Err(Error::NotPositiveDefinite(_))
        ));
        let singular = JointMoments {
            mu: [0.0; 3],
            sigma: [[1.0, 0.5, 0.5], [0.5, 1.0, 1.0], [0.5, 1.0, 1.0]],
        };
        assert_eq!(derive_full_params(&singular), Err(Error::SingularRegressorCovariance));
        let zero = JointMoments { mu: [0.0; 3], sigma: [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]] };
        assert_eq!(derive_simple_params(&zero), Err(Error::ZeroRegressorVariance));
    }
}
