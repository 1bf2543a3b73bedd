//! Test statistics and sufficient statistics for the IV regression model
//! `y1 = Y2 beta + u`, `Y2 = Z Pi2 + V2` with reduced form `Y = Z Pi + V`.
//!
//! Everything downstream of the data passes through the Gram pair
//! `(Y' P_Z Y, Y' M_Z Y)`: the likelihood-ratio statistic with estimated
//! error covariance is
//!
//! ```text
//! LR1/(n-k) = b0' Gp b0 / b0' Gm b0  -  lambda_min(Gp, Gm)
//! ```
//!
//! where `lambda_min` is the smallest generalized eigenvalue of the pair.
//! This form never touches an estimate of the error covariance: the
//! whitening factors cancel in both the ratio and the (congruence
//! invariant) eigenvalue, which is also why `psi1` of the six inner
//! products of the standardized statistics reproduces the same number for
//! any positive definite covariance plugged into their construction.

use crate::error::{Error, Result};
use crate::linalg::{
    gen_eig_smallest, gen_eig_smallest_2x2, sym_inv_sqrt, thin_qr, Matrix, SymMatrix,
};

/// Observed sample: outcome, endogenous block, instruments, and an optional
/// exogenous block that must be partialled out before testing.
#[derive(Debug, Clone)]
pub struct IvData {
    y1: Vec<f64>,
    y2: Matrix,
    z: Matrix,
    w: Option<Matrix>,
}

impl IvData {
    pub fn new(y1: Vec<f64>, y2: Matrix, z: Matrix, w: Option<Matrix>) -> Result<Self> {
        let n = y1.len();
        if y2.nrows() != n || z.nrows() != n {
            return Err(Error::InvalidDim(format!(
                "row counts differ: y has {n}, Y2 has {}, Z has {}",
                y2.nrows(),
                z.nrows()
            )));
        }
        if let Some(w) = &w {
            if w.nrows() != n {
                return Err(Error::InvalidDim(format!(
                    "row counts differ: y has {n}, W has {}",
                    w.nrows()
                )));
            }
        }
        let (k, l) = (z.ncols(), y2.ncols());
        if n <= k + l {
            return Err(Error::InvalidInput(format!(
                "need n > k + l so the residual Gram matrix is invertible; got n = {n}, k = {k}, l = {l}"
            )));
        }
        if !y1.iter().all(|x| x.is_finite()) || !y2.is_finite() || !z.is_finite() {
            return Err(Error::InvalidInput("non-finite entries in data".into()));
        }
        Ok(IvData { y1, y2, z, w })
    }

    pub fn n(&self) -> usize {
        self.y1.len()
    }

    pub fn k(&self) -> usize {
        self.z.ncols()
    }

    pub fn l(&self) -> usize {
        self.y2.ncols()
    }

    pub fn y1(&self) -> &[f64] {
        &self.y1
    }

    pub fn y2(&self) -> &Matrix {
        &self.y2
    }

    pub fn z(&self) -> &Matrix {
        &self.z
    }

    pub fn w(&self) -> Option<&Matrix> {
        self.w.as_ref()
    }

    /// Reduced-form outcome matrix `Y = [y1 : Y2]`, n x (l+1).
    pub fn reduced_form(&self) -> Matrix {
        let n = self.n();
        let l = self.l();
        Matrix::from_fn(n, l + 1, |i, j| if j == 0 { self.y1[i] } else { self.y2[(i, j - 1)] })
    }
}

/// Null hypothesis `beta = beta0` on the structural coefficients.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    beta0: Vec<f64>,
}

impl Hypothesis {
    pub fn new(beta0: Vec<f64>) -> Result<Self> {
        if beta0.is_empty() {
            return Err(Error::InvalidInput("beta0 must have at least one entry".into()));
        }
        if !beta0.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("beta0 must be finite".into()));
        }
        Ok(Hypothesis { beta0 })
    }

    pub fn l(&self) -> usize {
        self.beta0.len()
    }

    pub fn beta0(&self) -> &[f64] {
        &self.beta0
    }

    /// `b0 = (1, -beta0')'`, the null direction in reduced-form space.
    pub fn b0(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.l() + 1);
        v.push(1.0);
        v.extend(self.beta0.iter().map(|b| -b));
        v
    }

    /// `A0 = (beta0, I_l)'`, the (l+1) x l complement with `b0' A0 = 0`.
    pub fn a0(&self) -> Matrix {
        let l = self.l();
        Matrix::from_fn(l + 1, l, |i, j| {
            if i == 0 {
                self.beta0[j]
            } else if i - 1 == j {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// The covariance-free sufficient summary `(Y' P_Z Y, Y' M_Z Y)`.
#[derive(Debug, Clone)]
pub struct GramPair {
    pub gp: SymMatrix,
    pub gm: SymMatrix,
    pub n: usize,
    pub k: usize,
}

impl GramPair {
    pub fn new(gp: SymMatrix, gm: SymMatrix, n: usize, k: usize) -> Result<Self> {
        if gp.dim() != gm.dim() {
            return Err(Error::InvalidDim("Gram pair dimensions differ".into()));
        }
        let l = gp.dim() - 1;
        if n <= k + l {
            return Err(Error::InvalidInput(format!(
                "need n > k + l; got n = {n}, k = {k}, l = {l}"
            )));
        }
        Ok(GramPair { gp, gm, n, k })
    }

    /// Number of endogenous regressors implied by the block dimension.
    pub fn l(&self) -> usize {
        self.gp.dim() - 1
    }
}

/// The six inner products of the standardized statistics, the argument of
/// [`psi1`]: `d1..d3` from the projected (bar) block, `d4..d6` from the
/// residual (tilde) block.
#[derive(Debug, Clone)]
pub struct SixMoments {
    pub d1: f64,
    pub d2: Vec<f64>,
    pub d3: SymMatrix,
    pub d4: f64,
    pub d5: Vec<f64>,
    pub d6: SymMatrix,
    pub n: usize,
    pub k: usize,
}

impl SixMoments {
    pub fn l(&self) -> usize {
        self.d2.len()
    }

    /// `[[d1, d2'], [d2, d3]]`, the Gram matrix of the projected block.
    pub fn bar_block(&self) -> SymMatrix {
        block_from_parts(self.d1, &self.d2, &self.d3)
    }

    /// `[[d4, d5'], [d5, d6]]`, the Gram matrix of the residual block.
    pub fn tilde_block(&self) -> SymMatrix {
        block_from_parts(self.d4, &self.d5, &self.d6)
    }
}

fn block_from_parts(head: f64, cross: &[f64], tail: &SymMatrix) -> SymMatrix {
    let l = cross.len();
    debug_assert_eq!(tail.dim(), l);
    let mut b = SymMatrix::zeros(l + 1);
    b.set_sym(0, 0, head);
    for i in 0..l {
        b.set_sym(i + 1, 0, cross[i]);
        for j in 0..=i {
            b.set_sym(i + 1, j + 1, tail[(i, j)]);
        }
    }
    b
}

/// Estimated reduced-form error covariance `Y' M_Z Y / (n - k)`.
#[derive(Debug, Clone)]
pub struct OmegaHat {
    pub matrix: SymMatrix,
    pub df: usize,
}

/// Residualize `y1`, `Y2`, and `Z` on the exogenous block `W` and drop it.
pub fn partial_out(data: &IvData) -> Result<IvData> {
    let w = data
        .w()
        .ok_or_else(|| Error::InvalidInput("no exogenous block to partial out".into()))?;
    let (n, k, l, p) = (data.n(), data.k(), data.l(), w.ncols());
    if p + k + l >= n {
        return Err(Error::InvalidInput(format!(
            "need p < n - k - l to partial out exogenous regressors; got p = {p}, n = {n}, k = {k}, l = {l}"
        )));
    }
    let qw = thin_qr(w)?;
    let resid = |m: &Matrix| -> Matrix { m.sub(&qw.matmul(&qw.tr_matmul(m))) };
    let y1m = Matrix::from_column(data.y1());
    let y1r = resid(&y1m).col(0);
    let y2r = resid(data.y2());
    let zr = resid(data.z());
    IvData::new(y1r, y2r, zr, None)
}

/// Gram pair through the thin QR of Z: `Gp = (Q'Y)'(Q'Y)` and `Gm = R'R`
/// with `R = Y - Q(Q'Y)` the explicit residual (never `Y'Y - Gp`, which
/// cancels catastrophically when the instruments explain most variation).
pub fn gram_pair(data: &IvData) -> Result<GramPair> {
    if data.w().is_some() {
        return Err(Error::InvalidInput(
            "exogenous block present; call partial_out before computing the Gram pair".into(),
        ));
    }
    let q = thin_qr(data.z())?;
    let y = data.reduced_form();
    Ok(gram_pair_from_q(&q, &y, data.n(), data.k()))
}

/// Gram pair from an already-computed orthonormal basis of the instrument
/// column space; the simulation harness reuses one QR across replications.
pub(crate) fn gram_pair_from_q(q: &Matrix, y: &Matrix, n: usize, k: usize) -> GramPair {
    let qy = q.tr_matmul(y);
    let gp = qy.gram();
    let resid = y.sub(&q.matmul(&qy));
    let gm = resid.gram();
    GramPair { gp, gm, n, k }
}

/// `OmegaHat = Gm / (n - k)`; fails when the residual Gram is singular
/// (collinear reduced-form outcomes).
pub fn estimate_omega(g: &GramPair) -> Result<OmegaHat> {
    let df = g.n - g.k;
    let matrix = g.gm.scale(1.0 / df as f64);
    matrix
        .cholesky()
        .map_err(|_| Error::NotPositiveDefinite("residual Gram matrix is singular".into()))?;
    Ok(OmegaHat { matrix, df })
}

fn smallest_gen_eig(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    if a.dim() == 2 {
        gen_eig_smallest_2x2(a, b)
    } else {
        gen_eig_smallest(a, b)
    }
}

/// `LR1/(n-k)`: the likelihood-ratio statistic with estimated error
/// covariance, computed entirely from the Gram pair. Nonnegative by
/// construction; roundoff negatives are clamped to zero.
pub fn lr1_statistic(g: &GramPair, h: &Hypothesis) -> Result<f64> {
    if h.l() != g.l() {
        return Err(Error::InvalidDim(format!(
            "hypothesis has l = {}, Gram pair has l = {}",
            h.l(),
            g.l()
        )));
    }
    let b0 = h.b0();
    let denom = g.gm.quad_form(&b0);
    if !(denom > 0.0) {
        return Err(Error::NotPositiveDefinite(
            "b0' (Y' M_Z Y) b0 must be positive".into(),
        ));
    }
    let num = g.gp.quad_form(&b0);
    let lambda = smallest_gen_eig(&g.gp, &g.gm)?;
    Ok((num / denom - lambda).max(0.0))
}

/// `psi1`: `LR1/(n-k)` as a function of the six inner products,
/// `d1/d4 - lambda_min(bar block, tilde block)`.
///
/// For l = 1 the eigenvalue is the smaller root of the explicit quadratic
/// `det(bar - lambda * tilde) = 0`; any common scaling of its three
/// coefficients (such as the (n-k)^-2 normalization sometimes attached to
/// them) cancels in the root, which the test suite pins down.
pub fn psi1(m: &SixMoments) -> Result<f64> {
    if !(m.d4 > 0.0) {
        return Err(Error::NotPositiveDefinite("tilde block head must be positive".into()));
    }
    let lambda = smallest_gen_eig(&m.bar_block(), &m.tilde_block())
        .map_err(|_| Error::NotPositiveDefinite("tilde block must be positive definite".into()))?;
    Ok((m.d1 / m.d4 - lambda).max(0.0))
}

/// `psi0`: the known-covariance statistic `d1 - lambda_min([[d1,d2'],[d2,d3]])`.
/// For l = 1 this is the closed form `(d1 - d3 + sqrt((d1-d3)^2 + 4 d2^2))/2`.
pub fn psi0(d1: f64, d2: &[f64], d3: &SymMatrix) -> f64 {
    assert_eq!(d2.len(), d3.dim(), "psi0 shape mismatch");
    if d2.len() == 1 {
        let t = d3[(0, 0)];
        let disc = ((d1 - t) * (d1 - t) + 4.0 * d2[0] * d2[0]).max(0.0);
        return 0.5 * (d1 - t + disc.sqrt()).max(0.0);
    }
    let block = block_from_parts(d1, d2, d3);
    (d1 - block.smallest_eigenvalue()).max(0.0)
}

/// Columns of `F = [b0 (b0' O b0)^{-1/2} : O^{-1} A0 (A0' O^{-1} A0)^{-1/2}]`
/// for a given positive definite `O`; the congruence that standardizes the
/// reduced form.
fn standardizer(h: &Hypothesis, omega: &SymMatrix) -> Result<Matrix> {
    let l = h.l();
    if omega.dim() != l + 1 {
        return Err(Error::InvalidDim(format!(
            "omega must be {} x {}, got {}",
            l + 1,
            l + 1,
            omega.dim()
        )));
    }
    let b0 = h.b0();
    let bob = omega.quad_form(&b0);
    if !(bob > 0.0) {
        return Err(Error::NotPositiveDefinite("b0' omega b0 must be positive".into()));
    }
    let sb = 1.0 / bob.sqrt();
    let a0 = h.a0();
    let oia0 = omega.solve_matrix(&a0)?;
    let scale = SymMatrix::symmetrize(&a0.tr_matmul(&oia0));
    let g = sym_inv_sqrt(&scale)?;
    let right = oia0.matmul(&g.to_matrix());
    Ok(Matrix::from_fn(l + 1, l + 1, |i, j| {
        if j == 0 {
            b0[i] * sb
        } else {
            right[(i, j - 1)]
        }
    }))
}

fn split_block(b: &SymMatrix) -> (f64, Vec<f64>, SymMatrix) {
    let l = b.dim() - 1;
    let head = b[(0, 0)];
    let cross: Vec<f64> = (0..l).map(|i| b[(i + 1, 0)]).collect();
    let mut tail = SymMatrix::zeros(l);
    for i in 0..l {
        for j in 0..=i {
            tail.set_sym(i, j, b[(i + 1, j + 1)]);
        }
    }
    (head, cross, tail)
}

/// The standardized statistics for a known covariance: `Sbar = Q'Y b0
/// (b0' O b0)^{-1/2}` and `Tbar = Q'Y O^{-1} A0 (A0' O^{-1} A0)^{-1/2}`,
/// with `Q` the thin QR factor of Z standing in for `(Z'Z)^{-1/2} Z'`
/// (the two differ by a fixed rotation that no inner product sees).
pub fn oracle_bar_stats(
    data: &IvData,
    h: &Hypothesis,
    omega: &SymMatrix,
) -> Result<(Vec<f64>, Matrix)> {
    let f = standardizer(h, omega)?;
    let q = thin_qr(data.z())?;
    let qy = q.tr_matmul(&data.reduced_form());
    let std = qy.matmul(&f);
    let sbar = std.col(0);
    let tbar = Matrix::from_fn(data.k(), h.l(), |i, j| std[(i, j + 1)]);
    Ok((sbar, tbar))
}

/// All six inner products of the standardized bar/tilde statistics for a
/// known covariance, straight from the Gram pair by congruence with the
/// standardizing matrix.
pub fn oracle_six_moments(
    g: &GramPair,
    h: &Hypothesis,
    omega: &SymMatrix,
) -> Result<SixMoments> {
    let f = standardizer(h, omega)?;
    let bar = SymMatrix::symmetrize(&f.tr_matmul(&g.gp.to_matrix().matmul(&f)));
    let tilde = SymMatrix::symmetrize(&f.tr_matmul(&g.gm.to_matrix().matmul(&f)));
    let (d1, d2, d3) = split_block(&bar);
    let (d4, d5, d6) = split_block(&tilde);
    Ok(SixMoments { d1, d2, d3, d4, d5, d6, n: g.n, k: g.k })
}

/// The conditioning statistic `That' That` computed from the Gram pair:
/// `(n-k) * G A0' Gm^{-1} Gp Gm^{-1} A0 G` with `G = (A0' Gm^{-1} A0)^{-1/2}`,
/// which equals the Gram matrix of the estimated standardized first-stage
/// statistic without ever forming a k x k factorization.
pub fn tau_hat(g: &GramPair, h: &Hypothesis) -> Result<SymMatrix> {
    if h.l() != g.l() {
        return Err(Error::InvalidDim(format!(
            "hypothesis has l = {}, Gram pair has l = {}",
            h.l(),
            g.l()
        )));
    }
    let a0 = h.a0();
    let x = g.gm.solve_matrix(&a0)?;
    let scale = SymMatrix::symmetrize(&a0.tr_matmul(&x));
    let ginv = sym_inv_sqrt(&scale)?;
    let core = SymMatrix::symmetrize(&x.tr_matmul(&g.gp.to_matrix().matmul(&x)));
    let t = ginv.to_matrix().matmul(&core.to_matrix()).matmul(&ginv.to_matrix());
    Ok(SymMatrix::symmetrize(&t).scale((g.n - g.k) as f64))
}

/// Leverage diagnostic `(1/k) sum_i P_ii^2` from an orthonormal basis of
/// the instrument column space; values near 1 flag designs where the
/// non-normal-error validity condition fails.
pub fn leverage_diag(q: &Matrix) -> f64 {
    let (n, k) = (q.nrows(), q.ncols());
    let mut s = 0.0;
    for i in 0..n {
        let mut pii = 0.0;
        for j in 0..k {
            pii += q[(i, j)] * q[(i, j)];
        }
        s += pii * pii;
    }
    s / k as f64
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::SeededStream;

    pub(crate) fn random_data(
        stream: &mut SeededStream,
        n: usize,
        k: usize,
        l: usize,
    ) -> IvData {
        let z = Matrix::from_fn(n, k, |_, _| stream.normal());
        let y2 = Matrix::from_fn(n, l, |_, _| stream.normal());
        let y1: Vec<f64> = (0..n).map(|_| stream.normal()).collect();
        IvData::new(y1, y2, z, None).unwrap()
    }

    #[test]
    fn data_guards() {
        let z = Matrix::identity(4);
        let y2 = Matrix::from_column(&[1.0, 2.0, 3.0, 4.0]);
        let y1 = vec![0.0; 4];
        // n = 4 <= k + l = 5
        assert!(matches!(
            IvData::new(y1, y2, z, None),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn hypothesis_directions_are_orthogonal() {
        let h = Hypothesis::new(vec![0.7, -1.3]).unwrap();
        let b0 = h.b0();
        let a0 = h.a0();
        let cross = a0.tr_matmul_vec(&b0);
        for c in cross {
            assert!(c.abs() < 1e-15);
        }
    }

    #[test]
    fn partial_out_demeaning() {
        // demeaning is projection on a column of ones; padding rows keep the
        // sample mean at 2 while satisfying p < n - k - l
        let n = 5;
        let w = Matrix::from_column(&[1.0; 5]);
        let z = Matrix::from_column(&[1.0, 2.0, 4.0, -1.0, 3.0]);
        let y2 = Matrix::from_column(&[0.5, 0.25, 0.75, 0.1, -0.4]);
        let y1 = vec![1.0, 2.0, 3.0, 2.0, 2.0];
        let data = IvData::new(y1, y2, z, Some(w)).unwrap();
        let out = partial_out(&data).unwrap();
        let want = [-1.0, 0.0, 1.0, 0.0, 0.0];
        for i in 0..n {
            assert!((out.y1()[i] - want[i]).abs() < 1e-12);
        }
        assert!(out.w().is_none());
    }

    #[test]
    fn partial_out_rejects_saturated_w() {
        let n = 6;
        let w = Matrix::identity(n);
        let z = Matrix::from_fn(n, 2, |i, j| ((i + 1) * (j + 2)) as f64 + (i as f64).sin());
        let y2 = Matrix::from_column(&[1.0, 0.0, 2.0, 1.0, 3.0, -1.0]);
        let y1 = vec![0.0, 1.0, 0.5, 2.0, 1.5, -0.5];
        let data = IvData::new(y1, y2, z, Some(w)).unwrap();
        assert!(matches!(partial_out(&data), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn partial_out_residuals_orthogonal_to_w() {
        let mut s = SeededStream::new(20, 0);
        let n = 40;
        let w = Matrix::from_fn(n, 3, |_, _| s.normal());
        let z = Matrix::from_fn(n, 4, |_, _| s.normal());
        let y2 = Matrix::from_fn(n, 1, |_, _| s.normal());
        let y1: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let data = IvData::new(y1, y2, z, Some(w.clone())).unwrap();
        let out = partial_out(&data).unwrap();
        let y1r = Matrix::from_column(out.y1());
        assert!(w.tr_matmul(&y1r).max_abs() < 1e-10);
        assert!(w.tr_matmul(out.y2()).max_abs() < 1e-10);
        assert!(w.tr_matmul(out.z()).max_abs() < 1e-10);
    }

    #[test]
    fn gram_pair_orthogonal_case() {
        // Z lives on the first two coordinates, Y on the rest
        let n = 6;
        let z = Matrix::from_fn(n, 1, |i, _| if i < 2 { 1.0 } else { 0.0 });
        let y1: Vec<f64> = (0..n).map(|i| if i >= 2 { (i as f64) - 3.0 } else { 0.0 }).collect();
        let y2 = Matrix::from_fn(n, 1, |i, _| if i >= 2 { 1.0 } else { 0.0 });
        let data = IvData::new(y1, y2, z, None).unwrap();
        let g = gram_pair(&data).unwrap();
        assert!(g.gp.max_abs() < 1e-12, "gp should vanish");
        let y = data.reduced_form();
        let yy = y.gram();
        assert!(g.gm.sub(&yy).max_abs() < 1e-10, "gm should equal Y'Y");
    }

    #[test]
    fn gram_pair_matches_normal_equations() {
        let mut s = SeededStream::new(21, 0);
        let data = random_data(&mut s, 50, 5, 1);
        let g = gram_pair(&data).unwrap();
        // oracle: gp = Y'Z (Z'Z)^{-1} Z'Y by explicit normal equations
        let y = data.reduced_form();
        let ztz = data.z().gram();
        let zty = data.z().tr_matmul(&y);
        let solved = ztz.solve_matrix(&zty).unwrap();
        let gp_oracle = zty.tr_matmul(&solved);
        let scale = g.gp.max_abs().max(1.0);
        assert!(
            g.gp.to_matrix().sub(&gp_oracle).max_abs() < 1e-8 * scale,
            "gp does not match normal equations"
        );
        // additivity gp + gm = Y'Y
        let total = g.gp.add(&g.gm);
        assert!(total.sub(&y.gram()).max_abs() < 1e-8 * y.gram().max_abs());
    }

    #[test]
    fn estimate_omega_cases() {
        let nk = 10.0;
        let g = GramPair::new(
            SymMatrix::zeros(2),
            SymMatrix::diag(&[2.0 * nk, 3.0 * nk]),
            15,
            5,
        )
        .unwrap();
        let o = estimate_omega(&g).unwrap();
        assert!((o.matrix[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((o.matrix[(1, 1)] - 3.0).abs() < 1e-12);
        assert_eq!(o.df, 10);

        let g = GramPair::new(SymMatrix::zeros(2), SymMatrix::diag(&[1.0, 0.0]), 15, 5).unwrap();
        assert!(matches!(estimate_omega(&g), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn lr1_diagonal_case() {
        let h = Hypothesis::new(vec![0.0]).unwrap();
        for (g1, g2) in [(3.0, 1.0), (1.0, 3.0), (2.0, 2.0)] {
            let g = GramPair::new(
                SymMatrix::diag(&[g1, g2]),
                SymMatrix::identity(2),
                20,
                5,
            )
            .unwrap();
            let stat = lr1_statistic(&g, &h).unwrap();
            let want = g1 - g1.min(g2);
            assert!((stat - want).abs() < 1e-12, "got {stat}, want {want}");
        }
    }

    #[test]
    fn lr1_zero_when_no_signal() {
        let h = Hypothesis::new(vec![0.3]).unwrap();
        let g = GramPair::new(SymMatrix::zeros(2), SymMatrix::identity(2), 20, 5).unwrap();
        assert_eq!(lr1_statistic(&g, &h).unwrap(), 0.0);
    }

    #[test]
    fn lr1_matches_literal_whitened_definition() {
        let mut s = SeededStream::new(22, 0);
        for _ in 0..50 {
            let data = random_data(&mut s, 100, 5, 1);
            let h = Hypothesis::new(vec![0.5]).unwrap();
            let g = gram_pair(&data).unwrap();
            let stat = lr1_statistic(&g, &h).unwrap();
            // literal route: whiten by OmegaHat^{-1/2} and take the smallest
            // ordinary eigenvalue of the projected Gram over (n-k)
            let o = estimate_omega(&g).unwrap();
            let r = sym_inv_sqrt(&o.matrix).unwrap();
            let w = SymMatrix::symmetrize(
                &r.to_matrix().matmul(&g.gp.to_matrix()).matmul(&r.to_matrix()),
            );
            let lambda = w.smallest_eigenvalue() / (g.n - g.k) as f64;
            let b0 = h.b0();
            let literal = g.gp.quad_form(&b0) / g.gm.quad_form(&b0) - lambda;
            assert!(
                (stat - literal).abs() <= 1e-9 * stat.abs().max(1.0),
                "gram route {stat} vs literal {literal}"
            );
        }
    }

    #[test]
    fn lr1_invariant_to_common_scaling() {
        let mut s = SeededStream::new(23, 0);
        let data = random_data(&mut s, 60, 4, 1);
        let h = Hypothesis::new(vec![-0.2]).unwrap();
        let g = gram_pair(&data).unwrap();
        let stat = lr1_statistic(&g, &h).unwrap();
        for c in [0.1, 3.0, 250.0] {
            let scaled = GramPair::new(g.gp.scale(c * c), g.gm.scale(c * c), g.n, g.k).unwrap();
            let stat2 = lr1_statistic(&scaled, &h).unwrap();
            assert!((stat - stat2).abs() <= 1e-10 * stat.max(1.0));
        }
    }

    #[test]
    fn psi1_reduces_to_psi0_at_expected_tilde() {
        let nk = 95usize;
        let d1 = 7.0;
        let d2 = vec![1.5];
        let d3 = SymMatrix::diag(&[9.0]);
        let m = SixMoments {
            d1,
            d2: d2.clone(),
            d3: d3.clone(),
            d4: nk as f64,
            d5: vec![0.0],
            d6: SymMatrix::diag(&[nk as f64]),
            n: 100,
            k: 5,
        };
        let got = psi1(&m).unwrap();
        let want = psi0(d1, &d2, &d3) / nk as f64;
        assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
    }

    #[test]
    fn psi1_singular_bar_block() {
        let m = SixMoments {
            d1: 1.0,
            d2: vec![1.0],
            d3: SymMatrix::diag(&[1.0]),
            d4: 1.0,
            d5: vec![0.0],
            d6: SymMatrix::diag(&[1.0]),
            n: 10,
            k: 2,
        };
        assert!((psi1(&m).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psi1_quadratic_equals_general_eigen_path() {
        let mut s = SeededStream::new(24, 0);
        for _ in 0..200 {
            let g = Matrix::from_fn(4, 2, |_, _| s.normal());
            let bar = g.gram();
            let gt = Matrix::from_fn(4, 2, |_, _| s.normal());
            let mut tilde = gt.gram();
            for i in 0..2 {
                let v = tilde[(i, i)] + 0.5;
                tilde.set_sym(i, i, v);
            }
            let m = SixMoments {
                d1: bar[(0, 0)],
                d2: vec![bar[(1, 0)]],
                d3: SymMatrix::diag(&[bar[(1, 1)]]),
                d4: tilde[(0, 0)],
                d5: vec![tilde[(1, 0)]],
                d6: SymMatrix::diag(&[tilde[(1, 1)]]),
                n: 30,
                k: 4,
            };
            let fast = psi1(&m).unwrap();
            let slow = (m.d1 / m.d4
                - gen_eig_smallest(&m.bar_block(), &m.tilde_block()).unwrap())
            .max(0.0);
            assert!((fast - slow).abs() <= 1e-10 * fast.max(1.0));
        }
    }

    #[test]
    fn psi0_cases() {
        // d2 = 0 and d3 >= d1: smallest eigenvalue is d1, statistic 0
        assert!(psi0(2.0, &[0.0], &SymMatrix::diag(&[5.0])).abs() < 1e-14);
        // zero T block collapses to the head
        assert!((psi0(3.5, &[0.0], &SymMatrix::diag(&[0.0])) - 3.5).abs() < 1e-14);
    }

    #[test]
    fn psi0_closed_form_matches_eigen() {
        let mut s = SeededStream::new(25, 0);
        for _ in 0..200 {
            let g = Matrix::from_fn(4, 2, |_, _| s.normal());
            let b = g.gram();
            let (d1, d2, d3) = (b[(0, 0)], vec![b[(1, 0)]], SymMatrix::diag(&[b[(1, 1)]]));
            let closed = psi0(d1, &d2, &d3);
            let eig = d1 - b.smallest_eigenvalue();
            assert!((closed - eig).abs() <= 1e-12 * closed.max(1.0));
        }
    }

    #[test]
    fn oracle_bar_stats_zero_data() {
        let n = 8;
        let z = Matrix::from_fn(n, 2, |i, j| ((i * 2 + j + 1) as f64).sin() + 2.0 * (j as f64));
        let y2 = Matrix::from_fn(n, 1, |_, _| 0.0);
        let y1 = vec![0.0; n];
        let data = IvData::new(y1, y2, z, None).unwrap();
        let h = Hypothesis::new(vec![0.4]).unwrap();
        let (sbar, tbar) = oracle_bar_stats(&data, &h, &SymMatrix::identity(2)).unwrap();
        assert!(sbar.iter().all(|x| x.abs() < 1e-14));
        assert!(tbar.max_abs() < 1e-14);
    }

    #[test]
    fn oracle_bar_stats_identity_omega() {
        let mut s = SeededStream::new(26, 0);
        let data = random_data(&mut s, 30, 3, 1);
        let h = Hypothesis::new(vec![0.0]).unwrap();
        let (sbar, tbar) = oracle_bar_stats(&data, &h, &SymMatrix::identity(2)).unwrap();
        let q = thin_qr(data.z()).unwrap();
        let qy1 = q.tr_matmul_vec(data.y1());
        let qy2 = q.tr_matmul(data.y2());
        for i in 0..3 {
            assert!((sbar[i] - qy1[i]).abs() < 1e-12);
            assert!((tbar[(i, 0)] - qy2[(i, 0)]).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_six_moments_match_bar_stats_inner_products() {
        let mut s = SeededStream::new(27, 0);
        let data = random_data(&mut s, 40, 4, 1);
        let h = Hypothesis::new(vec![0.8]).unwrap();
        let omega = {
            let g = Matrix::from_fn(4, 2, |_, _| s.normal());
            let mut o = g.gram();
            for i in 0..2 {
                let v = o[(i, i)] + 0.5;
                o.set_sym(i, i, v);
            }
            o
        };
        let g = gram_pair(&data).unwrap();
        let m = oracle_six_moments(&g, &h, &omega).unwrap();
        let (sbar, tbar) = oracle_bar_stats(&data, &h, &omega).unwrap();
        let d1: f64 = sbar.iter().map(|x| x * x).sum();
        let d2: f64 = sbar.iter().zip(tbar.col(0)).map(|(a, b)| a * b).sum();
        let d3: f64 = tbar.col(0).iter().map(|x| x * x).sum();
        assert!((m.d1 - d1).abs() < 1e-9 * d1.max(1.0));
        assert!((m.d2[0] - d2).abs() < 1e-9 * d2.abs().max(1.0));
        assert!((m.d3[(0, 0)] - d3).abs() < 1e-9 * d3.max(1.0));
    }

    #[test]
    fn tau_hat_zero_when_gp_zero() {
        let g = GramPair::new(SymMatrix::zeros(2), SymMatrix::identity(2), 20, 5).unwrap();
        let h = Hypothesis::new(vec![0.1]).unwrap();
        let t = tau_hat(&g, &h).unwrap();
        assert!(t.max_abs() < 1e-12);
    }

    #[test]
    fn tau_hat_identity_omega_case() {
        let nk = 15.0;
        let mut gp = SymMatrix::zeros(2);
        gp.set_sym(0, 0, 3.0);
        gp.set_sym(1, 0, 1.2);
        gp.set_sym(1, 1, 7.5);
        let g = GramPair::new(gp.clone(), SymMatrix::identity(2).scale(nk), 20, 5).unwrap();
        let h = Hypothesis::new(vec![0.0]).unwrap();
        let t = tau_hat(&g, &h).unwrap();
        assert!((t[(0, 0)] - gp[(1, 1)]).abs() < 1e-10, "want gp[1][1], got {}", t[(0, 0)]);
    }

    #[test]
    fn tau_hat_matches_literal_definition() {
        let mut s = SeededStream::new(28, 0);
        for _ in 0..30 {
            let data = random_data(&mut s, 60, 5, 1);
            let h = Hypothesis::new(vec![0.3]).unwrap();
            let g = gram_pair(&data).unwrap();
            let t = tau_hat(&g, &h).unwrap();
            // literal: That = Q'Y OmegaHat^{-1} A0 (A0' OmegaHat^{-1} A0)^{-1/2}
            let o = estimate_omega(&g).unwrap();
            let a0 = h.a0();
            let oia0 = o.matrix.solve_matrix(&a0).unwrap();
            let scale = SymMatrix::symmetrize(&a0.tr_matmul(&oia0));
            let ginv = sym_inv_sqrt(&scale).unwrap();
            let q = thin_qr(data.z()).unwrap();
            let that = q
                .tr_matmul(&data.reduced_form())
                .matmul(&oia0.matmul(&ginv.to_matrix()));
            let literal = that.gram();
            assert!(
                (t[(0, 0)] - literal[(0, 0)]).abs() <= 1e-9 * literal[(0, 0)].max(1.0),
                "tau_hat {} vs literal {}",
                t[(0, 0)],
                literal[(0, 0)]
            );
        }
    }

    #[test]
    fn leverage_cases() {
        // balanced one-hot design, two units per instrument
        let k = 4;
        let n = 2 * k;
        let z = Matrix::from_fn(n, k, |i, j| if i / 2 == j { 1.0 } else { 0.0 });
        let q = thin_qr(&z).unwrap();
        assert!((leverage_diag(&q) - 0.5).abs() < 1e-12);
        // saturated
        let q = thin_qr(&Matrix::identity(6)).unwrap();
        assert!((leverage_diag(&q) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn leverage_matches_explicit_projection() {
        let mut s = SeededStream::new(29, 0);
        let n = 200;
        let k = 6;
        let z = Matrix::from_fn(n, k, |_, _| s.normal());
        let q = thin_qr(&z).unwrap();
        let got = leverage_diag(&q);
        // oracle: diag(P_Z) from the normal equations
        let ztz_inv = z.gram().inverse().unwrap();
        let mut s_acc = 0.0;
        for i in 0..n {
            let zi: Vec<f64> = (0..k).map(|j| z[(i, j)]).collect();
            let pii = ztz_inv.quad_form(&zi);
            s_acc += pii * pii;
        }
        let want = s_acc / k as f64;
        assert!((got - want).abs() < 1e-10, "got {got}, want {want}");
    }
}
