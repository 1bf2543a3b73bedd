//! Small dense linear algebra: thin QR of the instrument block, Cholesky,
//! Jacobi eigendecomposition for small symmetric matrices, the generalized
//! symmetric-definite eigenproblem, and symmetric PD inverse square roots.
//!
//! Projections onto the column space of an n×k matrix are always taken
//! through its thin QR factor; the n×n projection matrix is never formed.
//! Eigenproblems here are tiny (dimension l+1, typically 2), so cyclic
//! Jacobi is both adequate and accurate to machine precision.

use crate::error::{Error, Result};
use std::ops::{Index, IndexMut};

/// Relative pivot tolerance for thin QR rank checks, scaled by the largest
/// entry magnitude of the input (columns of mixed scale are common: the
/// simulation design mixes a constant with cubic powers).
const QR_RANK_TOL: f64 = 1e-10;

/// Relative pivot tolerance for Cholesky failure.
const CHOL_TOL: f64 = 1e-14;

/// Dense row-major matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be >= 1");
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Build from a row-major slice of length `rows * cols`.
    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match dimensions");
        assert!(rows >= 1 && cols >= 1);
        Matrix { rows, cols, data: data.to_vec() }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Single column as a matrix.
    pub fn from_column(v: &[f64]) -> Self {
        Matrix::from_fn(v.len(), 1, |i, _| v[i])
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self * other`
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for p in 0..self.cols {
                let a = self[(i, p)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(p, j)];
                }
            }
        }
        out
    }

    /// `self' * other`
    pub fn tr_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "tr_matmul dimension mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for p in 0..self.rows {
            for i in 0..self.cols {
                let a = self[(p, i)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(p, j)];
                }
            }
        }
        out
    }

    /// `self * v`
    pub fn matmul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matmul_vec dimension mismatch");
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let mut s = 0.0;
            for j in 0..self.cols {
                s += self[(i, j)] * v[j];
            }
            out[i] = s;
        }
        out
    }

    /// `self' * v`
    pub fn tr_matmul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "tr_matmul_vec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let a = v[i];
            for j in 0..self.cols {
                out[j] += a * self[(i, j)];
            }
        }
        out
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a -= b;
        }
        out
    }

    pub fn scale(&self, c: f64) -> Matrix {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= c;
        }
        out
    }

    /// Gram matrix `self' * self`, symmetric by construction.
    pub fn gram(&self) -> SymMatrix {
        let mut s = SymMatrix::zeros(self.cols);
        for i in 0..self.cols {
            for j in 0..=i {
                let mut acc = 0.0;
                for p in 0..self.rows {
                    acc += self[(p, i)] * self[(p, j)];
                }
                s.set_sym(i, j, acc);
            }
        }
        s
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Symmetric matrix with full storage; the lower triangle is authoritative
/// and mirrored on write, so symmetry is exact by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be >= 1");
        SymMatrix { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut s = SymMatrix::zeros(dim);
        for i in 0..dim {
            s.set_sym(i, i, 1.0);
        }
        s
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut s = SymMatrix::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            s.set_sym(i, i, v);
        }
        s
    }

    /// Build from a row-major slice; the strict upper triangle is ignored
    /// and replaced by the mirror of the lower one.
    pub fn from_row_slice(dim: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), dim * dim);
        let mut s = SymMatrix::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                s.set_sym(i, j, data[i * dim + j]);
            }
        }
        s
    }

    /// Symmetrize an arbitrary square matrix as `(A + A') / 2`.
    pub fn symmetrize(m: &Matrix) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "symmetrize requires a square matrix");
        let dim = m.nrows();
        let mut s = SymMatrix::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                s.set_sym(i, j, 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= c;
        }
        out
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a -= b;
        }
        out
    }

    /// Quadratic form `x' A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim);
        let mut s = 0.0;
        for i in 0..self.dim {
            let mut row = 0.0;
            for j in 0..self.dim {
                row += self[(i, j)] * x[j];
            }
            s += x[i] * row;
        }
        s
    }

    /// Lower Cholesky factor `L` with `A = L L'`. Fails when a pivot falls
    /// at or below `CHOL_TOL` times the largest diagonal entry.
    pub fn cholesky(&self) -> Result<Matrix> {
        let n = self.dim;
        let max_diag = (0..n).map(|i| self[(i, i)]).fold(0.0_f64, f64::max);
        let tol = CHOL_TOL * max_diag.max(f64::MIN_POSITIVE);
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for p in 0..j {
                d -= l[(j, p)] * l[(j, p)];
            }
            if !(d > tol) {
                return Err(Error::NotPositiveDefinite(format!(
                    "Cholesky pivot {d:.3e} at index {j}"
                )));
            }
            let dj = d.sqrt();
            l[(j, j)] = dj;
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for p in 0..j {
                    s -= l[(i, p)] * l[(j, p)];
                }
                l[(i, j)] = s / dj;
            }
        }
        Ok(l)
    }

    /// Solve `A x = b` through the Cholesky factorization.
    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        let l = self.cholesky()?;
        let mut x = b.to_vec();
        forward_substitute(&l, &mut x);
        back_substitute_transposed(&l, &mut x);
        Ok(x)
    }

    /// Solve `A X = B` column-wise through the Cholesky factorization.
    pub fn solve_matrix(&self, b: &Matrix) -> Result<Matrix> {
        assert_eq!(b.nrows(), self.dim);
        let l = self.cholesky()?;
        let mut out = Matrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let mut x = b.col(j);
            forward_substitute(&l, &mut x);
            back_substitute_transposed(&l, &mut x);
            for i in 0..b.nrows() {
                out[(i, j)] = x[i];
            }
        }
        Ok(out)
    }

    /// Inverse of a PD matrix through Cholesky.
    pub fn inverse(&self) -> Result<SymMatrix> {
        let inv = self.solve_matrix(&Matrix::identity(self.dim))?;
        Ok(SymMatrix::symmetrize(&inv))
    }

    /// Eigendecomposition by cyclic Jacobi: returns eigenvalues in ascending
    /// order and the matching orthonormal eigenvectors as columns.
    pub fn eigen(&self) -> (Vec<f64>, Matrix) {
        let n = self.dim;
        let mut a = self.clone();
        let mut v = Matrix::identity(n);
        let frob: f64 = a.data.iter().map(|x| x * x).sum::<f64>().sqrt();
        if frob > 0.0 {
            for _sweep in 0..100 {
                let off: f64 = {
                    let mut s = 0.0;
                    for i in 0..n {
                        for j in (i + 1)..n {
                            s += a[(i, j)] * a[(i, j)];
                        }
                    }
                    s.sqrt()
                };
                if off <= 1e-15 * frob {
                    break;
                }
                for p in 0..n {
                    for q in (p + 1)..n {
                        let apq = a[(p, q)];
                        if apq.abs() <= 1e-300 {
                            continue;
                        }
                        let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                        // smaller-magnitude root of t^2 + 2 t theta - 1 = 0
                        let t = if theta.abs() > 1e150 {
                            0.5 / theta
                        } else {
                            let sgn = if theta >= 0.0 { 1.0 } else { -1.0 };
                            sgn / (theta.abs() + (theta * theta + 1.0).sqrt())
                        };
                        let c = 1.0 / (t * t + 1.0).sqrt();
                        let s = t * c;
                        jacobi_rotate(&mut a, &mut v, p, q, c, s);
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
        let vals: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
        let vecs = Matrix::from_fn(n, n, |i, j| v[(i, order[j])]);
        (vals, vecs)
    }

    pub fn smallest_eigenvalue(&self) -> f64 {
        self.eigen().0[0]
    }
}

impl Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.dim && j < self.dim);
        &self.data[i * self.dim + j]
    }
}

fn forward_substitute(l: &Matrix, x: &mut [f64]) {
    let n = l.nrows();
    for i in 0..n {
        let mut s = x[i];
        for j in 0..i {
            s -= l[(i, j)] * x[j];
        }
        x[i] = s / l[(i, i)];
    }
}

/// Solve `L' x = b` in place given the lower factor `L`.
fn back_substitute_transposed(l: &Matrix, x: &mut [f64]) {
    let n = l.nrows();
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= l[(j, i)] * x[j];
        }
        x[i] = s / l[(i, i)];
    }
}

/// One Jacobi rotation in the (p, q) plane applied to `a`, accumulated in `v`.
fn jacobi_rotate(a: &mut SymMatrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.dim();
    let app = a[(p, p)];
    let aqq = a[(q, q)];
    let apq = a[(p, q)];
    let new_pp = c * c * app - 2.0 * c * s * apq + s * s * aqq;
    let new_qq = s * s * app + 2.0 * c * s * apq + c * c * aqq;
    for i in 0..n {
        if i != p && i != q {
            let aip = a[(i, p)];
            let aiq = a[(i, q)];
            a.set_sym(i, p, c * aip - s * aiq);
            a.set_sym(i, q, s * aip + c * aiq);
        }
    }
    a.set_sym(p, p, new_pp);
    a.set_sym(q, q, new_qq);
    a.set_sym(p, q, 0.0);
    for i in 0..n {
        let vip = v[(i, p)];
        let viq = v[(i, q)];
        v[(i, p)] = c * vip - s * viq;
        v[(i, q)] = s * vip + c * viq;
    }
}

/// Thin QR factor of an n×k matrix with full column rank: returns `Q` (n×k)
/// with orthonormal columns spanning the same column space, signs normalized
/// so the implicit R has a positive diagonal.
///
/// Householder reflections; a pivot magnitude at or below
/// `1e-10 * max|entry|` signals rank deficiency.
pub fn thin_qr(z: &Matrix) -> Result<Matrix> {
    let n = z.nrows();
    let k = z.ncols();
    if k > n {
        return Err(Error::RankDeficient(format!("{k} columns exceed {n} rows")));
    }
    let tol = QR_RANK_TOL * z.max_abs();
    let mut a = z.clone();
    let mut betas = vec![0.0; k];
    let mut rdiag = vec![0.0; k];
    for j in 0..k {
        let mut norm2 = 0.0;
        for i in j..n {
            norm2 += a[(i, j)] * a[(i, j)];
        }
        let norm = norm2.sqrt();
        if !(norm > tol) {
            return Err(Error::RankDeficient(format!(
                "pivot {norm:.3e} at column {j} below tolerance {tol:.3e}"
            )));
        }
        let alpha = if a[(j, j)] >= 0.0 { -norm } else { norm };
        rdiag[j] = alpha;
        a[(j, j)] -= alpha;
        let mut vtv = 0.0;
        for i in j..n {
            vtv += a[(i, j)] * a[(i, j)];
        }
        betas[j] = 2.0 / vtv;
        for col in (j + 1)..k {
            let mut dot = 0.0;
            for i in j..n {
                dot += a[(i, j)] * a[(i, col)];
            }
            let f = betas[j] * dot;
            for i in j..n {
                a[(i, col)] -= f * a[(i, j)];
            }
        }
    }
    // accumulate the thin Q by applying the reflectors to I_{n×k} in reverse
    let mut q = Matrix::zeros(n, k);
    for j in 0..k {
        q[(j, j)] = 1.0;
    }
    for j in (0..k).rev() {
        for col in 0..k {
            let mut dot = 0.0;
            for i in j..n {
                dot += a[(i, j)] * q[(i, col)];
            }
            let f = betas[j] * dot;
            for i in j..n {
                q[(i, col)] -= f * a[(i, j)];
            }
        }
    }
    for j in 0..k {
        if rdiag[j] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok(q)
}

/// Smallest generalized eigenvalue of the symmetric-definite pair (A, B):
/// the smallest root of `det(A - lambda B) = 0` with `B` PD.
///
/// Reduction `B = L L'`, then the smallest ordinary eigenvalue of
/// `L^{-1} A L^{-T}`; congruence-invariant, so any common nonsingular
/// transformation of the pair leaves the result unchanged.
pub fn gen_eig_smallest(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    assert_eq!(a.dim(), b.dim(), "pair dimensions differ");
    let l = b
        .cholesky()
        .map_err(|_| Error::NotPositiveDefinite("B in generalized eigenproblem".into()))?;
    // X = L^{-1} A
    let m = a.dim();
    let mut x = a.to_matrix();
    for j in 0..m {
        let mut col = x.col(j);
        forward_substitute(&l, &mut col);
        for i in 0..m {
            x[(i, j)] = col[i];
        }
    }
    // C = X L^{-T} computed as (L^{-1} X')' to reuse the forward solve
    let mut xt = x.transpose();
    for j in 0..m {
        let mut col = xt.col(j);
        forward_substitute(&l, &mut col);
        for i in 0..m {
            xt[(i, j)] = col[i];
        }
    }
    let c = SymMatrix::symmetrize(&xt.transpose());
    Ok(c.smallest_eigenvalue())
}

/// Smaller root of `a x^2 + b x + c = 0` with `a > 0`; a roundoff-negative
/// discriminant is clamped to zero (near-repeated roots arise from nearly
/// proportional Gram pairs).
pub fn quadratic_smallest_root(a: f64, b: f64, c: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::NonPositiveLeadingCoefficient(a));
    }
    let disc = (b * b - 4.0 * a * c).max(0.0);
    Ok((-b - disc.sqrt()) / (2.0 * a))
}

/// Unique symmetric PD root `R` with `R A R = I`, from the symmetric
/// eigendecomposition. Fails when an eigenvalue is at or below
/// `1e-14 * trace(A)`.
pub fn sym_inv_sqrt(a: &SymMatrix) -> Result<SymMatrix> {
    let (vals, vecs) = a.eigen();
    let tol = 1e-14 * a.trace().max(f64::MIN_POSITIVE);
    let dim = a.dim();
    for &v in &vals {
        if !(v > tol) {
            return Err(Error::NotPositiveDefinite(format!(
                "eigenvalue {v:.3e} in inverse square root"
            )));
        }
    }
    let mut out = SymMatrix::zeros(dim);
    for i in 0..dim {
        for j in 0..=i {
            let mut s = 0.0;
            for p in 0..dim {
                s += vecs[(i, p)] * vecs[(j, p)] / vals[p].sqrt();
            }
            out.set_sym(i, j, s);
        }
    }
    Ok(out)
}

/// Smallest generalized eigenvalue of a 2x2 symmetric-definite pair through
/// the explicit quadratic `det(A - lambda B) = 0`; used on the l = 1 hot
/// path, with [`gen_eig_smallest`] retained for l > 1 and cross-checks.
pub(crate) fn gen_eig_smallest_2x2(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    debug_assert_eq!(a.dim(), 2);
    debug_assert_eq!(b.dim(), 2);
    let qa = b[(0, 0)] * b[(1, 1)] - b[(0, 1)] * b[(0, 1)];
    if !(qa > 0.0) || !(b[(0, 0)] > 0.0) {
        return Err(Error::NotPositiveDefinite("B in 2x2 generalized eigenproblem".into()));
    }
    let qb = -(a[(0, 0)] * b[(1, 1)] + a[(1, 1)] * b[(0, 0)] - 2.0 * a[(0, 1)] * b[(0, 1)]);
    let qc = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(0, 1)];
    quadratic_smallest_root(qa, qb, qc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededStream;

    fn random_matrix(stream: &mut SeededStream, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| stream.normal())
    }

    fn random_pd(stream: &mut SeededStream, dim: usize) -> SymMatrix {
        let g = random_matrix(stream, dim + 2, dim);
        let mut s = g.gram();
        for i in 0..dim {
            let v = s[(i, i)] + 0.1;
            s.set_sym(i, i, v);
        }
        s
    }

    #[test]
    fn thin_qr_identity_is_identity() {
        let q = thin_qr(&Matrix::identity(3)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((q[(i, j)] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn thin_qr_constant_column() {
        let z = Matrix::from_column(&[1.0, 1.0, 1.0, 1.0]);
        let q = thin_qr(&z).unwrap();
        for i in 0..4 {
            assert!((q[(i, 0)] - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn thin_qr_orthonormal_and_projects() {
        let mut s = SeededStream::new(7, 0);
        let z = random_matrix(&mut s, 20, 4);
        let q = thin_qr(&z).unwrap();
        let qtq = q.gram();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((qtq[(i, j)] - expect).abs() < 1e-12, "Q'Q not identity");
            }
        }
        // Q Q' Z = Z since Q spans the columns of Z
        let qtz = q.tr_matmul(&z);
        let qqtz = q.matmul(&qtz);
        let diff = qqtz.sub(&z);
        assert!(diff.max_abs() < 1e-10, "projection does not reproduce Z");
    }

    #[test]
    fn thin_qr_rejects_rank_deficient() {
        let mut z = Matrix::zeros(5, 2);
        for i in 0..5 {
            z[(i, 0)] = (i + 1) as f64;
            z[(i, 1)] = 2.0 * (i + 1) as f64;
        }
        match thin_qr(&z) {
            Err(Error::RankDeficient(_)) => {}
            other => panic!("expected RankDeficient, got {other:?}"),
        }
    }

    #[test]
    fn residual_orthogonal_to_z() {
        let mut s = SeededStream::new(8, 0);
        let z = random_matrix(&mut s, 30, 3);
        let y = random_matrix(&mut s, 30, 2);
        let q = thin_qr(&z).unwrap();
        let resid = y.sub(&q.matmul(&q.tr_matmul(&y)));
        let cross = z.tr_matmul(&resid);
        assert!(cross.max_abs() < 1e-10);
    }

    #[test]
    fn gen_eig_diagonal_cases() {
        let a = SymMatrix::diag(&[2.0, 5.0]);
        let b = SymMatrix::identity(2);
        assert!((gen_eig_smallest(&a, &b).unwrap() - 2.0).abs() < 1e-12);

        let a = SymMatrix::diag(&[6.0, 2.0]);
        let b = SymMatrix::diag(&[2.0, 1.0]);
        assert!((gen_eig_smallest(&a, &b).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gen_eig_matches_determinant_bisection() {
        // independent oracle: bisection on det(A - lambda B) for the
        // smallest sign change starting below the smallest eigenvalue
        fn det4(m: &Matrix) -> f64 {
            // Laplace expansion is fine for 4x4 oracle use
            fn det3(m: &[[f64; 3]; 3]) -> f64 {
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            }
            let mut d = 0.0;
            for c in 0..4 {
                let mut sub = [[0.0; 3]; 3];
                for i in 1..4 {
                    let mut jj = 0;
                    for j in 0..4 {
                        if j == c {
                            continue;
                        }
                        sub[i - 1][jj] = m[(i, j)];
                        jj += 1;
                    }
                }
                let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                d += sign * m[(0, c)] * det3(&sub);
            }
            d
        }
        let mut s = SeededStream::new(9, 0);
        for _ in 0..20 {
            let g = random_matrix(&mut s, 6, 4);
            let a = g.gram(); // PSD
            let b = random_pd(&mut s, 4);
            let lam = gen_eig_smallest(&a, &b).unwrap();
            let f = |x: f64| {
                let m = a.to_matrix().sub(&b.to_matrix().scale(x));
                det4(&m)
            };
            // det(A - xB) = det(B) * prod(lam_i - x) is positive below the
            // smallest eigenvalue; scan upward for the first sign change,
            // then bisect. The coordinate Rayleigh quotients bound lam_min.
            let upper = (0..4).map(|i| a[(i, i)] / b[(i, i)]).fold(f64::MAX, f64::min);
            let dx = (upper.max(1e-6)) / 2000.0;
            let mut lo = -1.0;
            assert!(f(lo) > 0.0, "det should be positive below smallest eigenvalue");
            let mut hi = lo;
            let mut steps = 0;
            while f(hi) > 0.0 {
                lo = hi;
                hi += dx;
                steps += 1;
                assert!(steps < 1_000_000, "no sign change found");
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let root = 0.5 * (lo + hi);
            assert!(
                (root - lam).abs() <= 1e-9 * lam.abs().max(1.0),
                "bisection {root} vs solver {lam}"
            );
        }
    }

    #[test]
    fn gen_eig_congruence_invariant() {
        let mut s = SeededStream::new(10, 0);
        for _ in 0..20 {
            let g = random_matrix(&mut s, 5, 2);
            let a = g.gram();
            let b = random_pd(&mut s, 2);
            let lam = gen_eig_smallest(&a, &b).unwrap();
            // random nonsingular F
            let f = Matrix::from_fn(2, 2, |_, _| s.normal());
            let detf = f[(0, 0)] * f[(1, 1)] - f[(0, 1)] * f[(1, 0)];
            if detf.abs() < 0.1 {
                continue;
            }
            let fa = SymMatrix::symmetrize(&f.tr_matmul(&a.to_matrix().matmul(&f)));
            let fb = SymMatrix::symmetrize(&f.tr_matmul(&b.to_matrix().matmul(&f)));
            let lam2 = gen_eig_smallest(&fa, &fb).unwrap();
            assert!(
                (lam - lam2).abs() <= 1e-10 * lam.abs().max(1.0),
                "congruence changed eigenvalue: {lam} vs {lam2}"
            );
        }
    }

    #[test]
    fn quadratic_root_cases() {
        assert!((quadratic_smallest_root(1.0, -3.0, 2.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((quadratic_smallest_root(1.0, -2.0, 1.0).unwrap() - 1.0).abs() < 1e-14);
        match quadratic_smallest_root(0.0, 1.0, 1.0) {
            Err(Error::NonPositiveLeadingCoefficient(_)) => {}
            other => panic!("expected NonPositiveLeadingCoefficient, got {other:?}"),
        }
    }

    #[test]
    fn quadratic_path_matches_gen_eig_on_2x2_pairs() {
        let mut s = SeededStream::new(11, 0);
        for _ in 0..200 {
            let g = random_matrix(&mut s, 4, 2);
            let a = g.gram();
            let b = random_pd(&mut s, 2);
            let lam = gen_eig_smallest(&a, &b).unwrap();
            let lam2 = gen_eig_smallest_2x2(&a, &b).unwrap();
            assert!((lam - lam2).abs() <= 1e-10 * lam.abs().max(1.0));
        }
    }

    #[test]
    fn sym_inv_sqrt_cases() {
        let r = sym_inv_sqrt(&SymMatrix::identity(2)).unwrap();
        assert!((r[(0, 0)] - 1.0).abs() < 1e-14 && r[(0, 1)].abs() < 1e-14);

        let r = sym_inv_sqrt(&SymMatrix::diag(&[4.0, 9.0])).unwrap();
        assert!((r[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((r[(1, 1)] - 1.0 / 3.0).abs() < 1e-14);

        let mut s = SeededStream::new(12, 0);
        for _ in 0..20 {
            let a = random_pd(&mut s, 2);
            let r = sym_inv_sqrt(&a).unwrap();
            let rar = r.to_matrix().matmul(&a.to_matrix()).matmul(&r.to_matrix());
            for i in 0..2 {
                for j in 0..2 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((rar[(i, j)] - expect).abs() < 1e-12, "R A R != I");
                }
            }
            // commutes with A
            let ra = r.to_matrix().matmul(&a.to_matrix());
            let ar = a.to_matrix().matmul(&r.to_matrix());
            assert!(ra.sub(&ar).max_abs() < 1e-12);
        }
    }

    #[test]
    fn sym_inv_sqrt_rejects_singular() {
        match sym_inv_sqrt(&SymMatrix::diag(&[1.0, 0.0])) {
            Err(Error::NotPositiveDefinite(_)) => {}
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = SymMatrix::diag(&[1.0, -1.0]);
        assert!(matches!(a.cholesky(), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn solve_and_inverse_round_trip() {
        let mut s = SeededStream::new(13, 0);
        let a = random_pd(&mut s, 3);
        let b = vec![1.0, -2.0, 0.5];
        let x = a.solve_vec(&b).unwrap();
        let ax = a.to_matrix().matmul_vec(&x);
        for i in 0..3 {
            assert!((ax[i] - b[i]).abs() < 1e-10);
        }
        let inv = a.inverse().unwrap();
        let prod = a.to_matrix().matmul(&inv.to_matrix());
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn eigen_reconstructs() {
        let mut s = SeededStream::new(14, 0);
        for dim in [2usize, 3, 5] {
            let a = random_pd(&mut s, dim);
            let (vals, vecs) = a.eigen();
            for j in 0..dim {
                let v = vecs.col(j);
                let av = a.to_matrix().matmul_vec(&v);
                for i in 0..dim {
                    assert!(
                        (av[i] - vals[j] * v[i]).abs() < 1e-9 * a.max_abs().max(1.0),
                        "A v != lambda v"
                    );
                }
            }
            for w in vals.windows(2) {
                assert!(w[0] <= w[1], "eigenvalues not ascending");
            }
        }
    }
}
