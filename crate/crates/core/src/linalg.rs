//! Small dense matrices and a Householder QR least-squares solver.
//!
//! Designs in this crate are tall and thin (n up to ~10⁶ rows, rarely more
//! than a dozen columns), so the solver works column-wise on an equilibrated
//! copy of the design and reports a 1-norm condition estimate of the
//! triangular factor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default upper bound on the condition estimate before a design is
/// declared rank deficient.
pub const DEFAULT_COND_MAX: f64 = 1e10;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from rows; all rows must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidDataset("ragged rows".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    /// Builds a matrix from columns; all columns must have the same length.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::InvalidDataset("columns of unequal length".into()));
        }
        let cols = columns.len();
        let mut m = Matrix::zeros(rows, cols);
        for (j, c) in columns.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| {
                (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol)
            })
    }

    /// Leading `k × k` determinant, computed by elimination.
    pub fn leading_minor(&self, k: usize) -> f64 {
        let mut sub = Matrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                sub[(i, j)] = self[(i, j)];
            }
        }
        sub.determinant()
    }

    pub fn determinant(&self) -> f64 {
        assert_eq!(self.rows, self.cols, "determinant of non-square matrix");
        let n = self.rows;
        let mut a = self.clone();
        let mut det = 1.0;
        for k in 0..n {
            let pivot = (k..n)
                .max_by(|&x, &y| a[(x, k)].abs().total_cmp(&a[(y, k)].abs()))
                .unwrap_or(k);
            if a[(pivot, k)] == 0.0 {
                return 0.0;
            }
            if pivot != k {
                a.swap_rows(pivot, k);
                det = -det;
            }
            det *= a[(k, k)];
            for i in k + 1..n {
                let f = a[(i, k)] / a[(k, k)];
                for j in k..n {
                    let v = a[(k, j)];
                    a[(i, j)] -= f * v;
                }
            }
        }
        det
    }

    /// Solves `self · x = b` by Gaussian elimination with partial pivoting.
    /// Returns `None` when a pivot vanishes.
    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        assert_eq!(self.rows, self.cols, "solve with non-square matrix");
        assert_eq!(self.rows, b.len(), "dimension mismatch");
        let n = self.rows;
        let mut a = self.clone();
        let mut x = b.to_vec();
        for k in 0..n {
            let pivot = (k..n).max_by(|&p, &q| a[(p, k)].abs().total_cmp(&a[(q, k)].abs()))?;
            if a[(pivot, k)] == 0.0 {
                return None;
            }
            a.swap_rows(pivot, k);
            x.swap(pivot, k);
            for i in k + 1..n {
                let f = a[(i, k)] / a[(k, k)];
                for j in k..n {
                    let v = a[(k, j)];
                    a[(i, j)] -= f * v;
                }
                x[i] -= f * x[k];
            }
        }
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|j| a[(k, j)] * x[j]).sum();
            x[k] = (x[k] - s) / a[(k, k)];
        }
        Some(x)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Result of an ordinary least-squares solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresSolution {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
    /// `(XᵀX)⁻¹` in the original (unscaled) units.
    pub xtx_inverse: Matrix,
    /// 1-norm condition estimate of the column-equilibrated design; ≥ 1.
    pub condition_estimate: f64,
}

/// Least squares with the default condition limit.
pub fn least_squares(design: &Matrix, response: &[f64]) -> Result<LeastSquaresSolution> {
    least_squares_with_limit(design, response, DEFAULT_COND_MAX)
}

/// Least squares via Householder QR of the column-equilibrated design.
pub fn least_squares_with_limit(
    design: &Matrix,
    response: &[f64],
    cond_max: f64,
) -> Result<LeastSquaresSolution> {
    let (n, p) = (design.rows(), design.cols());
    if response.len() != n {
        return Err(Error::InvalidDataset(format!(
            "response has {} rows, design has {n}",
            response.len()
        )));
    }
    if n <= p {
        return Err(Error::Underdetermined(format!("{n} rows for {p} parameters")));
    }
    if p == 0 {
        return Err(Error::InvalidSpec("design has no columns".into()));
    }
    if design.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("design".into()));
    }
    if response.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("response".into()));
    }

    let rank_deficient = |condition: f64| Error::RankDeficient { condition, limit: cond_max };

    // Column-major working copy, each column scaled to unit Euclidean norm.
    let mut scale = Vec::with_capacity(p);
    let mut a: Vec<Vec<f64>> = Vec::with_capacity(p);
    for j in 0..p {
        let col = design.column(j);
        let norm = euclidean_norm(&col);
        if norm == 0.0 {
            return Err(rank_deficient(f64::INFINITY));
        }
        scale.push(norm);
        a.push(col.into_iter().map(|v| v / norm).collect());
    }
    let mut qtb = response.to_vec();

    let mut diag = vec![0.0; p];
    for k in 0..p {
        let norm = euclidean_norm(&a[k][k..]);
        if norm == 0.0 {
            return Err(rank_deficient(f64::INFINITY));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        // v = x - alpha e1, stored in place of column k below the diagonal.
        a[k][k] -= alpha;
        let vnorm2: f64 = a[k][k..].iter().map(|v| v * v).sum();
        let (head, tail) = a.split_at_mut(k + 1);
        let v = &head[k][k..];
        if vnorm2 > 0.0 {
            for col in tail.iter_mut() {
                reflect(v, vnorm2, &mut col[k..]);
            }
            reflect(v, vnorm2, &mut qtb[k..]);
        }
        diag[k] = alpha;
    }

    // R (upper triangular, p × p) in scaled units.
    let mut r = Matrix::zeros(p, p);
    for j in 0..p {
        for i in 0..j {
            r[(i, j)] = a[j][i];
        }
        r[(j, j)] = diag[j];
    }
    let r_inv = upper_triangular_inverse(&r).ok_or_else(|| rank_deficient(f64::INFINITY))?;
    let condition = (one_norm(&r) * one_norm(&r_inv)).max(1.0);
    if !condition.is_finite() || condition > cond_max {
        return Err(rank_deficient(condition));
    }

    let z = r_inv.matvec(&qtb[..p]);
    let coefficients: Vec<f64> = z.iter().zip(&scale).map(|(zi, s)| zi / s).collect();
    let fitted = design.matvec(&coefficients);
    let residuals: Vec<f64> = response.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let rss = residuals.iter().map(|u| u * u).sum();

    let mut xtx_inverse = r_inv.matmul(&r_inv.transpose());
    for i in 0..p {
        for j in 0..p {
            xtx_inverse[(i, j)] /= scale[i] * scale[j];
        }
    }

    Ok(LeastSquaresSolution {
        coefficients,
        residuals,
        rss,
        xtx_inverse,
        condition_estimate: condition,
    })
}

fn reflect(v: &[f64], vnorm2: f64, x: &mut [f64]) {
    let dot: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    let f = 2.0 * dot / vnorm2;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= f * vi;
    }
}

fn euclidean_norm(v: &[f64]) -> f64 {
    // Scaled accumulation so large-magnitude columns do not overflow.
    let max = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if max == 0.0 || !max.is_finite() {
        return max;
    }
    max * v.iter().map(|x| (x / max).powi(2)).sum::<f64>().sqrt()
}

fn one_norm(m: &Matrix) -> f64 {
    (0..m.cols())
        .map(|j| (0..m.rows()).map(|i| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn upper_triangular_inverse(r: &Matrix) -> Option<Matrix> {
    let p = r.rows();
    let mut inv = Matrix::zeros(p, p);
    for j in 0..p {
        if r[(j, j)] == 0.0 {
            return None;
        }
        inv[(j, j)] = 1.0 / r[(j, j)];
        for i in (0..j).rev() {
            let s: f64 = (i + 1..=j).map(|k| r[(i, k)] * inv[(k, j)]).sum();
            inv[(i, j)] = -s / r[(i, i)];
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(rows: &[[f64; 2]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn exact_line() {
        let x = design(&[[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]]);
        let sol = least_squares(&x, &[1.0, 3.0, 5.0]).unwrap();
        assert!((sol.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((sol.coefficients[1] - 2.0).abs() < 1e-12);
        assert!(sol.rss < 1e-24);
    }

    #[test]
    fn hand_solved_normal_equations() {
        // XᵀX = [[3,3],[3,5]], Xᵀy = [2,3] → β = (1/6, 1/2).
        let x = design(&[[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]]);
        let sol = least_squares(&x, &[0.0, 1.0, 1.0]).unwrap();
        assert!((sol.coefficients[0] - 1.0 / 6.0).abs() < 1e-12);
        assert!((sol.coefficients[1] - 0.5).abs() < 1e-12);
        // Residuals (-1/6, 1/3, -1/6).
        assert!((sol.rss - 1.0 / 6.0).abs() < 1e-12);
        // (XᵀX)⁻¹ = [[5,-3],[-3,3]] / 6.
        assert!((sol.xtx_inverse[(0, 0)] - 5.0 / 6.0).abs() < 1e-12);
        assert!((sol.xtx_inverse[(0, 1)] + 0.5).abs() < 1e-12);
        assert!((sol.xtx_inverse[(1, 1)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn duplicate_column_is_rank_deficient() {
        let x = Matrix::from_rows(&[
            vec![1.0, 0.5, 0.5],
            vec![1.0, 1.5, 1.5],
            vec![1.0, 2.0, 2.0],
            vec![1.0, 3.5, 3.5],
        ])
        .unwrap();
        let err = least_squares(&x, &[1.0, 2.0, 3.0, 5.0]).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }), "{err:?}");
    }

    #[test]
    fn underdetermined() {
        let x = design(&[[1.0, 0.0], [1.0, 1.0]]);
        assert!(matches!(least_squares(&x, &[0.0, 1.0]), Err(Error::Underdetermined(_))));
    }

    #[test]
    fn non_finite_rejected() {
        let x = design(&[[1.0, 0.0], [1.0, f64::NAN], [1.0, 2.0]]);
        assert!(matches!(least_squares(&x, &[0.0, 1.0, 2.0]), Err(Error::NonFiniteInput(_))));
    }

    #[test]
    fn determinant_and_solve() {
        let m = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        assert!((m.determinant() - 8.0).abs() < 1e-12);
        let x = m.solve(&[2.0, 1.0]).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-12 && x[1].abs() < 1e-12);
    }
}
