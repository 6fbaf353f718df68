//! Dense real-matrix kernel for the small square systems used throughout the
//! crate (d and m up to a few hundred at most).
//!
//! Everything here is a pure function of its inputs. Vectors are plain
//! `[f64]` slices; matrices are row-major [`Matrix`] values.

use std::fmt;
use std::ops::{Index, IndexMut};

use thiserror::Error;

/// Relative tolerance for the power iteration in [`spectral_norm`].
pub const POWER_ITERATION_TOL: f64 = 1e-10;
/// Iteration cap for the power iteration in [`spectral_norm`].
pub const POWER_ITERATION_CAP: usize = 10_000;
const JACOBI_MAX_SWEEPS: usize = 100;
const LYAPUNOV_MAX_DOUBLINGS: usize = 64;
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("{op}: dimension mismatch ({}x{} vs {}x{})", .left.0, .left.1, .right.0, .right.1)]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: expected a square matrix, got {rows}x{cols}")]
    NotSquare {
        op: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("{op}: matrix must have at least one row and one column")]
    Empty { op: &'static str },
    #[error("{op}: non-finite entry produced")]
    NonFinite { op: &'static str },
    #[error("{op}: no convergence after {iterations} iterations (last gap {gap:e})")]
    NotConverged {
        op: &'static str,
        iterations: usize,
        gap: f64,
    },
    #[error("not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("{op}: matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { op: &'static str, asymmetry: f64 },
    #[error("unstable system: spectral norm {norm} >= 1")]
    Unstable { norm: f64 },
    #[error("{op}: matrix is rank deficient")]
    RankDeficient { op: &'static str },
}

pub type Result<T> = std::result::Result<T, MatrixError>;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Builds a matrix from row-major entries. Rejects empty shapes, length
    /// mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(MatrixError::Empty { op: "new" });
        }
        if data.len() != rows * cols {
            return Err(MatrixError::DimensionMismatch {
                op: "new",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MatrixError::NonFinite { op: "new" });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(MatrixError::DimensionMismatch {
                op: "from_rows",
                left: (r, c),
                right: (r, rows.iter().map(|row| row.len()).max().unwrap_or(0)),
            });
        }
        Self::new(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Scalar multiple of the identity.
    pub fn scaled_identity(n: usize, s: f64) -> Self {
        Self::from_diag(&vec![s; n])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    /// `self += s * other`, in place.
    pub fn axpy(&mut self, s: f64, other: &Matrix) -> Result<()> {
        self.check_same_shape("axpy", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    fn check_same_shape(&self, op: &'static str, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(MatrixError::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, op: &'static str, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.check_same_shape(op, other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(v, &mut out)?;
        Ok(out)
    }

    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        if v.len() != self.cols || out.len() != self.rows {
            return Err(MatrixError::DimensionMismatch {
                op: "mul_vec",
                left: self.shape(),
                right: (v.len(), 1),
            });
        }
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(r), v);
        }
        Ok(())
    }

    /// `selfᵀ * v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(MatrixError::DimensionMismatch {
                op: "tr_mul_vec",
                left: (self.cols, self.rows),
                right: (v.len(), 1),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest entrywise asymmetry `|m_ij - m_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                worst = worst.max((self[(r, c)] - self[(c, r)]).abs());
            }
        }
        worst
    }

    /// `(m + mᵀ) / 2`.
    pub fn symmetrized(&self) -> Result<Matrix> {
        if !self.is_square() {
            return Err(self.not_square("symmetrized"));
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                let avg = 0.5 * (self[(r, c)] + self[(c, r)]);
                out[(r, c)] = avg;
                out[(c, r)] = avg;
            }
        }
        Ok(out)
    }

    fn not_square(&self, op: &'static str) -> MatrixError {
        MatrixError::NotSquare {
            op,
            rows: self.rows,
            cols: self.cols,
        }
    }

    /// Integer power of a square matrix by repeated squaring.
    pub fn pow(&self, mut exp: u32) -> Result<Matrix> {
        if !self.is_square() {
            return Err(self.not_square("pow"));
        }
        let mut result = Matrix::identity(self.rows);
        let mut base = self.clone();
        while exp > 0 {
            if exp & 1 == 1 {
                result = matmul(&result, &base)?;
            }
            exp >>= 1;
            if exp > 0 {
                base = matmul(&base, &base)?;
            }
        }
        Ok(result)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `a bᵀ`.
pub fn outer(a: &[f64], b: &[f64]) -> Matrix {
    assert!(!a.is_empty() && !b.is_empty(), "empty outer product");
    let mut m = Matrix::zeros(a.len(), b.len());
    for (r, &ar) in a.iter().enumerate() {
        for (c, &bc) in b.iter().enumerate() {
            m[(r, c)] = ar * bc;
        }
    }
    m
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(MatrixError::DimensionMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for r in 0..a.rows {
        let out_row = &mut out.data[r * b.cols..(r + 1) * b.cols];
        for (k, &ark) in a.row(r).iter().enumerate() {
            if ark == 0.0 {
                continue;
            }
            for (o, &bkc) in out_row.iter_mut().zip(b.row(k)) {
                *o += ark * bkc;
            }
        }
    }
    if !out.is_finite() {
        return Err(MatrixError::NonFinite { op: "matmul" });
    }
    Ok(out)
}

/// `a b aᵀ`, the congruence used by the Lyapunov iteration.
fn congruence(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    matmul(&matmul(a, b)?, &a.transpose())
}

/// Largest singular value, by power iteration on `mᵀm`.
///
/// The iteration starts from the all-ones vector plus a small fixed ramp, so
/// the result is deterministic. It stops once the Rayleigh quotient changes
/// by less than [`POWER_ITERATION_TOL`] relative.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    if !m.is_finite() {
        return Err(MatrixError::NonFinite { op: "spectral_norm" });
    }
    if m.data.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let n = m.cols;
    let start: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * (i as f64 + 1.0) / n as f64).collect();
    match power_iterate(m, start)? {
        Some(s) => Ok(s),
        None => {
            // Start vector fell into the null space of m; try the basis.
            for i in 0..n {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                if let Some(s) = power_iterate(m, e)? {
                    return Ok(s);
                }
            }
            Ok(0.0)
        }
    }
}

fn power_iterate(m: &Matrix, mut v: Vec<f64>) -> Result<Option<f64>> {
    let norm = norm2(&v);
    v.iter_mut().for_each(|x| *x /= norm);
    let mut mv = vec![0.0; m.rows];
    let mut lambda_prev = f64::NAN;
    let mut gap = f64::INFINITY;
    for _ in 0..POWER_ITERATION_CAP {
        m.mul_vec_into(&v, &mut mv)?;
        // Rayleigh quotient of mᵀm at the unit vector v.
        let lambda = dot(&mv, &mv);
        if lambda == 0.0 {
            return Ok(None);
        }
        let w = m.tr_mul_vec(&mv)?;
        let w_norm = norm2(&w);
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / w_norm;
        }
        if lambda_prev.is_finite() {
            gap = (lambda - lambda_prev).abs() / lambda;
            if gap < POWER_ITERATION_TOL {
                m.mul_vec_into(&v, &mut mv)?;
                return Ok(Some(dot(&mv, &mv).max(lambda).sqrt()));
            }
        }
        lambda_prev = lambda;
    }
    Err(MatrixError::NotConverged {
        op: "spectral_norm",
        iterations: POWER_ITERATION_CAP,
        gap,
    })
}

/// All singular values of a square matrix, sorted descending.
///
/// One-sided (Hestenes) Jacobi: plane rotations chosen from the 2x2 blocks of
/// `mᵀm` are applied to the columns of `m` until they are mutually
/// orthogonal; the singular values are the final column norms. This is the
/// cyclic Jacobi eigenvalue method on `mᵀm` without forming `mᵀm`, which keeps
/// tiny singular values accurate in absolute terms.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(m.not_square("singular_values"));
    }
    if !m.is_finite() {
        return Err(MatrixError::NonFinite { op: "singular_values" });
    }
    let n = m.cols;
    // Work on columns as contiguous rows of the transpose.
    let mut cols = m.transpose();
    // Columns annihilated down to rounding noise count as zero; their
    // direction is meaningless and would never orthogonalize.
    let negligible = (n as f64 * f64::EPSILON * m.frobenius_norm()).powi(2);
    let mut converged = false;
    let mut last_off = 0.0;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        last_off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let cp = cols.row(p);
                    let cq = cols.row(q);
                    (dot(cp, cp), dot(cq, cq), dot(cp, cq))
                };
                if gamma == 0.0 || alpha <= negligible || beta <= negligible {
                    continue;
                }
                let off = gamma.abs() / (alpha * beta).sqrt();
                last_off = f64::max(last_off, off);
                if off <= f64::EPSILON {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..n {
                    let a = cols[(p, k)];
                    let b = cols[(q, k)];
                    cols[(p, k)] = c * a - s * b;
                    cols[(q, k)] = s * a + c * b;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(MatrixError::NotConverged {
            op: "singular_values",
            iterations: JACOBI_MAX_SWEEPS,
            gap: last_off,
        });
    }
    let mut values: Vec<f64> = (0..n).map(|i| norm2(cols.row(i))).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi, sorted descending.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(m.not_square("symmetric_eigenvalues"));
    }
    if !m.is_finite() {
        return Err(MatrixError::NonFinite { op: "symmetric_eigenvalues" });
    }
    let asym = m.asymmetry();
    if asym > SYMMETRY_TOL * m.max_abs().max(1.0) {
        return Err(MatrixError::NotSymmetric {
            op: "symmetric_eigenvalues",
            asymmetry: asym,
        });
    }
    let n = m.rows;
    let mut a = m.symmetrized()?;
    let scale = a.frobenius_norm();
    if scale == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut off = 0.0;
    for _ in 0..JACOBI_MAX_SWEEPS {
        off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        off = off.sqrt();
        if off <= f64::EPSILON * scale * 1e-2 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut rest = 0.0;
    for p in 0..n {
        for q in (p + 1)..n {
            rest += a[(p, q)] * a[(p, q)];
        }
    }
    // Rotations stall at the rounding floor; accept anything near it.
    if rest.sqrt() > 1e-12 * scale {
        return Err(MatrixError::NotConverged {
            op: "symmetric_eigenvalues",
            iterations: JACOBI_MAX_SWEEPS,
            gap: off,
        });
    }
    let mut values: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    values.sort_by(|x, y| y.total_cmp(x));
    Ok(values)
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = m`.
pub fn cholesky(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(m.not_square("cholesky"));
    }
    let asym = m.asymmetry();
    if asym > SYMMETRY_TOL * m.max_abs().max(1.0) {
        return Err(MatrixError::NotSymmetric {
            op: "cholesky",
            asymmetry: asym,
        });
    }
    let n = m.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = m[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag.is_nan() || diag <= 0.0 {
            return Err(MatrixError::NotPositiveDefinite { index: j, pivot: diag });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` given the Cholesky factor `L`.
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = l.rows;
    if b.len() != n {
        return Err(MatrixError::DimensionMismatch {
            op: "cholesky_solve",
            left: l.shape(),
            right: (b.len(), 1),
        });
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[(i, k)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            y[i] -= l[(k, i)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    Ok(y)
}

/// Stationary covariance `G = Σ_t Aᵗ Σ (Aᵗ)ᵀ`, the solution of
/// `G = A G Aᵀ + Σ`, by the doubling iteration
/// `G ← G + M G Mᵀ`, `M ← M²` starting from `G = Σ`, `M = A`.
pub fn solve_lyapunov(a: &Matrix, sigma: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(a.not_square("solve_lyapunov"));
    }
    if sigma.shape() != a.shape() {
        return Err(MatrixError::DimensionMismatch {
            op: "solve_lyapunov",
            left: a.shape(),
            right: sigma.shape(),
        });
    }
    let norm = spectral_norm(a)?;
    if norm >= 1.0 {
        return Err(MatrixError::Unstable { norm });
    }
    let mut g = sigma.clone();
    let mut power = a.clone();
    let mut gap = f64::INFINITY;
    for _ in 0..LYAPUNOV_MAX_DOUBLINGS {
        let update = congruence(&power, &g)?;
        let update_norm = update.frobenius_norm();
        g.axpy(1.0, &update)?;
        gap = update_norm;
        if update_norm <= 1e-14 * g.frobenius_norm() {
            return Ok(g);
        }
        power = matmul(&power, &power)?;
    }
    Err(MatrixError::NotConverged {
        op: "solve_lyapunov",
        iterations: LYAPUNOV_MAX_DOUBLINGS,
        gap,
    })
}

/// Thin QR of a square matrix by twice-iterated modified Gram-Schmidt.
/// `R` has a strictly positive diagonal, so the factorization is unique.
pub fn qr(m: &Matrix) -> Result<(Matrix, Matrix)> {
    if !m.is_square() {
        return Err(m.not_square("qr"));
    }
    let n = m.rows;
    let mut q_cols = m.transpose();
    let mut r = Matrix::zeros(n, n);
    let scale = m.frobenius_norm();
    for j in 0..n {
        for _pass in 0..2 {
            for i in 0..j {
                let proj = dot(q_cols.row(i), q_cols.row(j));
                r[(i, j)] += proj;
                for k in 0..n {
                    let qi = q_cols[(i, k)];
                    q_cols[(j, k)] -= proj * qi;
                }
            }
        }
        let norm = norm2(q_cols.row(j));
        if norm <= 1e-14 * scale {
            return Err(MatrixError::RankDeficient { op: "qr" });
        }
        r[(j, j)] = norm;
        for k in 0..n {
            q_cols[(j, k)] /= norm;
        }
    }
    Ok((q_cols.transpose(), r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = m(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(matmul(&a, &b).unwrap(), m(&[&[19.0, 22.0], &[43.0, 50.0]]));
        let x = m(&[&[1.5, -2.0, 0.25], &[0.0, 3.0, 1.0], &[-1.0, 0.5, 2.0]]);
        assert_eq!(matmul(&Matrix::identity(3), &x).unwrap(), x);
        assert_eq!(matmul(&Matrix::zeros(3, 3), &x).unwrap(), Matrix::zeros(3, 3));
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, MatrixError::DimensionMismatch { .. }));
    }

    #[test]
    fn new_rejects_non_finite() {
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn spectral_norm_examples() {
        assert!((spectral_norm(&Matrix::identity(4)).unwrap() - 1.0).abs() < 1e-12);
        assert!((spectral_norm(&Matrix::from_diag(&[0.9, 0.3])).unwrap() - 0.9).abs() < 1e-10);
        let shift = m(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert!((spectral_norm(&shift).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(spectral_norm(&Matrix::zeros(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn spectral_norm_handles_orthogonal_start() {
        // The fixed start vector is almost orthogonal to neither singular
        // vector here, but the null space check still has to work.
        let a = m(&[&[1.0, -1.0], &[0.0, 0.0]]);
        assert!((spectral_norm(&a).unwrap() - 2f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn singular_values_examples() {
        let sv = singular_values(&Matrix::identity(4)).unwrap();
        assert!(sv.iter().all(|s| (s - 1.0).abs() < 1e-12));

        let avg = Matrix::new(5, 5, vec![0.2; 25]).unwrap();
        let sv = singular_values(&avg).unwrap();
        assert!((sv[0] - 1.0).abs() < 1e-12);
        assert!(sv[1..].iter().all(|s| s.abs() < 1e-10), "{sv:?}");

        let mut circ = Matrix::zeros(5, 5);
        for k in 0..5 {
            circ[(k, k)] = 0.3;
            circ[(k, (k + 1) % 5)] = 0.35;
            circ[(k, (k + 4) % 5)] = 0.35;
        }
        let sv = singular_values(&circ).unwrap();
        let expected = 0.3 + 0.7 * (2.0 * std::f64::consts::PI / 5.0).cos();
        assert!((sv[1] - expected).abs() < 1e-10);
        assert!((sv[1] - 0.5163).abs() < 1e-4);
    }

    #[test]
    fn symmetric_eigenvalues_keep_sign() {
        let a = m(&[&[2.0, 1.0], &[1.0, -2.0]]);
        let ev = symmetric_eigenvalues(&a).unwrap();
        assert!((ev[0] - 5f64.sqrt()).abs() < 1e-12);
        assert!((ev[1] + 5f64.sqrt()).abs() < 1e-12);
        assert!(symmetric_eigenvalues(&m(&[&[0.0, 1.0], &[0.0, 0.0]])).is_err());
    }

    #[test]
    fn cholesky_examples() {
        assert_eq!(cholesky(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
        assert_eq!(cholesky(&Matrix::from_diag(&[4.0, 9.0])).unwrap(), Matrix::from_diag(&[2.0, 3.0]));
        let l = cholesky(&m(&[&[4.0, 2.0], &[2.0, 5.0]])).unwrap();
        assert_eq!(l, m(&[&[2.0, 0.0], &[1.0, 2.0]]));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let err = cholesky(&m(&[&[1.0, 2.0], &[2.0, 1.0]])).unwrap_err();
        assert!(matches!(err, MatrixError::NotPositiveDefinite { index: 1, .. }));
        assert!(err.to_string().contains("not positive definite"));
        assert!(cholesky(&m(&[&[1.0, 0.5], &[0.0, 1.0]])).is_err());
    }

    #[test]
    fn cholesky_solve_matches_direct() {
        let a = m(&[&[4.0, 2.0], &[2.0, 5.0]]);
        let l = cholesky(&a).unwrap();
        let x = cholesky_solve(&l, &[2.0, 9.0]).unwrap();
        // 4x + 2y = 2, 2x + 5y = 9 -> x = -0.5, y = 2
        assert!((x[0] + 0.5).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn lyapunov_examples() {
        let sigma = m(&[&[2.0, 0.5], &[0.5, 1.0]]);
        assert_eq!(solve_lyapunov(&Matrix::zeros(2, 2), &sigma).unwrap(), sigma);

        let g = solve_lyapunov(&m(&[&[0.5]]), &m(&[&[1.0]])).unwrap();
        assert!((g[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);

        let g = solve_lyapunov(&Matrix::from_diag(&[0.9, 0.3]), &Matrix::identity(2)).unwrap();
        assert!((g[(0, 0)] - 1.0 / 0.19).abs() < 1e-12);
        assert!((g[(1, 1)] - 1.0 / 0.91).abs() < 1e-12);
        assert_eq!(g[(0, 1)], 0.0);
    }

    #[test]
    fn lyapunov_uses_transposed_powers() {
        // Non-symmetric A: the fixed point must satisfy G = A G Aᵀ + Σ.
        let a = m(&[&[0.5, 0.4], &[0.0, 0.2]]);
        let sigma = Matrix::identity(2);
        let g = solve_lyapunov(&a, &sigma).unwrap();
        let residual = g.sub(&congruence(&a, &g).unwrap()).unwrap().sub(&sigma).unwrap();
        assert!(spectral_norm(&residual).unwrap() <= 1e-12 * spectral_norm(&g).unwrap());
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let err = solve_lyapunov(&m(&[&[1.0]]), &m(&[&[1.0]])).unwrap_err();
        assert!(err.to_string().contains("unstable system"));
    }

    #[test]
    fn qr_reconstructs() {
        let a = m(&[&[2.0, -1.0, 0.5], &[1.0, 3.0, 0.0], &[0.0, 1.0, 4.0]]);
        let (q, r) = qr(&a).unwrap();
        let qtq = matmul(&q.transpose(), &q).unwrap();
        assert!(qtq.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-14);
        assert!(matmul(&q, &r).unwrap().sub(&a).unwrap().max_abs() < 1e-13);
        assert!((0..3).all(|i| r[(i, i)] > 0.0));
        assert!(qr(&Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn pow_matches_repeated_product() {
        let a = m(&[&[0.5, 0.1], &[-0.2, 0.3]]);
        let mut expect = Matrix::identity(2);
        for _ in 0..7 {
            expect = matmul(&expect, &a).unwrap();
        }
        assert!(a.pow(7).unwrap().sub(&expect).unwrap().max_abs() < 1e-16);
        assert_eq!(a.pow(0).unwrap(), Matrix::identity(2));
    }

    #[test]
    fn singular_values_of_rank_one_averaging() {
        for m in 2..16 {
            let p = Matrix::new(m, m, vec![1.0 / m as f64; m * m]).unwrap();
            let sv = singular_values(&p).unwrap();
            assert!((sv[0] - 1.0).abs() < 1e-12, "m = {m}");
            assert!(sv[1..].iter().all(|&v| v < 1e-12), "m = {m}: {sv:?}");
        }
    }
}
