//! Monte-Carlo conditional critical values and test decisions.
//!
//! Under the null and conditional on the standardized first-stage statistic
//! having Gram matrix `tau`, the six inner products feeding `psi1` are
//! distributed as
//!
//! ```text
//! d2 ~ N_l(0, tau),   d1 = d2' tau^+ d2 + chi2(k - rank(tau)),   d3 = tau,
//! (d4, d5, d6) = blocks of Wishart(n - k, I_{l+1})
//! ```
//!
//! independently. Writing `d2 = L g` with `L L' = tau` and `g ~ N(0, I_l)`
//! collapses the first line to `d1 = g'g + e`, `e ~ chi2(k - l)`, which is
//! exact for every PSD `tau` including `tau = 0` and costs O(1) per
//! replication in `k`. Critical values are order statistics of `B`
//! independent such draws, one stream per replication so results do not
//! depend on execution order or worker count.
//!
//! Scale convention: [`critval_mclr`] returns the tabulation-scale critical
//! value, `(n-k)` times the `ceil((1-alpha) B)`-th ascending order statistic
//! of the `psi1` draws, directly comparable with [`critval_clr`]. The
//! decision rule in [`mclr_test`] compares the statistic `LR1/(n-k)` with
//! the unscaled order statistic from the same draw set, which is the same
//! rejection event.

use crate::error::{Error, Result};
use crate::linalg::{quadratic_smallest_root, Matrix, SymMatrix};
use crate::rng::SeededStream;
use crate::statistics::{
    gram_pair, lr1_statistic, oracle_six_moments, psi0, psi1, tau_hat, GramPair, Hypothesis,
    IvData, SixMoments,
};
use rayon::prelude::*;

/// Monte-Carlo configuration: replication count, level, and master seed.
#[derive(Debug, Clone)]
pub struct McConfig {
    reps: usize,
    alpha: f64,
    master_seed: u64,
}

impl McConfig {
    pub fn new(reps: usize, alpha: f64, master_seed: u64) -> Result<Self> {
        if reps < 100 {
            return Err(Error::InvalidInput(format!(
                "need at least 100 Monte-Carlo replications, got {reps}"
            )));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha must lie in (0,1), got {alpha}")));
        }
        Ok(McConfig { reps, alpha, master_seed })
    }

    pub fn reps(&self) -> usize {
        self.reps
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn with_master_seed(&self, master_seed: u64) -> Self {
        McConfig { master_seed, ..*self }
    }
}

/// Outcome of one test invocation, with full provenance.
#[derive(Debug, Clone)]
pub struct TestDecision {
    pub statistic: f64,
    pub critical_value: f64,
    pub pvalue: f64,
    pub reject: bool,
    pub alpha: f64,
    pub reps: usize,
    pub master_seed: u64,
    pub conditioning_tau: SymMatrix,
}

/// 0-based index of the `ceil((1-alpha) B)`-th ascending order statistic.
/// The tiny slack keeps mathematically integral products from ceiling up
/// after floating-point rounding.
fn order_stat_index(b: usize, alpha: f64) -> usize {
    let rank = ((1.0 - alpha) * b as f64 - 1e-9).ceil() as usize;
    rank.clamp(1, b) - 1
}

/// Factor `L` with `L L' = tau` for a PSD conditioning matrix, from the
/// symmetric eigendecomposition so that singular and zero `tau` are handled
/// uniformly. Eigenvalues within roundoff of zero are clamped to zero.
fn psd_factor(tau: &SymMatrix) -> Result<Matrix> {
    let dim = tau.dim();
    let (vals, vecs) = tau.eigen();
    let tol = 1e-8 * tau.max_abs().max(1e-300);
    let mut factor = Matrix::zeros(dim, dim);
    for j in 0..dim {
        if vals[j] < -tol {
            return Err(Error::InvalidInput(format!(
                "conditioning matrix has negative eigenvalue {:.3e}",
                vals[j]
            )));
        }
        let s = vals[j].max(0.0).sqrt();
        for i in 0..dim {
            factor[(i, j)] = vecs[(i, j)] * s;
        }
    }
    Ok(factor)
}

fn validate_dims(n: usize, k: usize, l: usize, tau: &SymMatrix) -> Result<()> {
    if k < l {
        return Err(Error::InvalidDim(format!("need k >= l, got k = {k}, l = {l}")));
    }
    if n <= k + l {
        return Err(Error::InvalidInput(format!(
            "need n > k + l; got n = {n}, k = {k}, l = {l}"
        )));
    }
    if tau.dim() != l {
        return Err(Error::InvalidDim(format!(
            "conditioning matrix must be {l} x {l}, got {}",
            tau.dim()
        )));
    }
    Ok(())
}

/// One draw from the conditional null law of the six inner products given
/// the conditioning Gram matrix `tau`. O(1) in `k` per replication.
pub fn draw_conditional_components(
    stream: &mut SeededStream,
    n: usize,
    k: usize,
    l: usize,
    tau: &SymMatrix,
) -> Result<SixMoments> {
    validate_dims(n, k, l, tau)?;
    let factor = psd_factor(tau)?;
    Ok(draw_with_factor(stream, n, k, l, &factor, tau))
}

fn draw_with_factor(
    stream: &mut SeededStream,
    n: usize,
    k: usize,
    l: usize,
    factor: &Matrix,
    tau: &SymMatrix,
) -> SixMoments {
    let g: Vec<f64> = (0..l).map(|_| stream.normal()).collect();
    let e = if k > l { stream.chi_square(k - l).expect("df >= 1") } else { 0.0 };
    let d1 = g.iter().map(|x| x * x).sum::<f64>() + e;
    let d2 = factor.matmul_vec(&g);
    let w = stream.wishart_identity(n - k, l + 1).expect("df > dim by precondition");
    let d4 = w.matrix[(0, 0)];
    let d5: Vec<f64> = (0..l).map(|i| w.matrix[(i + 1, 0)]).collect();
    let mut d6 = SymMatrix::zeros(l);
    for i in 0..l {
        for j in 0..=i {
            d6.set_sym(i, j, w.matrix[(i + 1, j + 1)]);
        }
    }
    SixMoments { d1, d2, d3: tau.clone(), d4, d5, d6, n, k }
}

/// Per-replication primitives on the l = 1 hot path; field layout mirrors
/// the draw order of [`draw_conditional_components`] exactly, so the two
/// paths produce bit-identical statistics from the same stream.
struct DrawL1 {
    g: f64,
    e: f64,
    w1: f64,
    w2: f64,
    w3: f64,
}

fn draw_l1(stream: &mut SeededStream, k: usize, df: usize) -> DrawL1 {
    let g = stream.normal();
    let e = if k > 1 { stream.chi_square(k - 1).expect("df >= 1") } else { 0.0 };
    let a00 = stream.chi_square(df).expect("df >= 1").sqrt();
    let a10 = stream.normal();
    let a11 = stream.chi_square(df - 1).expect("df >= 1").sqrt();
    DrawL1 { g, e, w1: a00 * a00, w2: a10 * a00, w3: a10 * a10 + a11 * a11 }
}

fn psi1_from_draw_l1(d: &DrawL1, sqrt_tau: f64, tau: f64) -> f64 {
    let d1 = d.g * d.g + d.e;
    let d2 = sqrt_tau * d.g;
    let qa = d.w1 * d.w3 - d.w2 * d.w2;
    let qb = -(d1 * d.w3 + tau * d.w1 - 2.0 * d2 * d.w2);
    let qc = d1 * tau - d2 * d2;
    let lambda = quadratic_smallest_root(qa, qb, qc).expect("Wishart block is PD a.s.");
    (d1 / d.w1 - lambda).max(0.0)
}

fn psi0_from_draw_l1(d: &DrawL1, sqrt_tau: f64, tau: f64) -> f64 {
    let d1 = d.g * d.g + d.e;
    let d2 = sqrt_tau * d.g;
    let disc = ((d1 - tau) * (d1 - tau) + 4.0 * d2 * d2).max(0.0);
    0.5 * (d1 - tau + disc.sqrt()).max(0.0)
}

/// B draws of `psi1` under the conditional null law, one stream per
/// replication index; order-independent and deterministic.
fn psi1_draws(n: usize, k: usize, l: usize, tau: &SymMatrix, cfg: &McConfig) -> Result<Vec<f64>> {
    validate_dims(n, k, l, tau)?;
    let factor = psd_factor(tau)?;
    let seed = cfg.master_seed;
    if l == 1 {
        let sqrt_tau = factor[(0, 0)];
        let t = tau[(0, 0)];
        Ok((0..cfg.reps)
            .into_par_iter()
            .map(|j| {
                let mut stream = SeededStream::new(seed, j as u64);
                psi1_from_draw_l1(&draw_l1(&mut stream, k, n - k), sqrt_tau, t)
            })
            .collect())
    } else {
        (0..cfg.reps)
            .into_par_iter()
            .map(|j| {
                let mut stream = SeededStream::new(seed, j as u64);
                psi1(&draw_with_factor(&mut stream, n, k, l, &factor, tau))
            })
            .collect()
    }
}

/// B draws of `psi0` under the conditional null law of the known-covariance
/// statistic, reconstructing the full-rank head as `d1 = g'g + e`.
fn psi0_draws(k: usize, l: usize, tau: &SymMatrix, cfg: &McConfig) -> Result<Vec<f64>> {
    if k < l {
        return Err(Error::InvalidDim(format!("need k >= l, got k = {k}, l = {l}")));
    }
    if tau.dim() != l {
        return Err(Error::InvalidDim(format!(
            "conditioning matrix must be {l} x {l}, got {}",
            tau.dim()
        )));
    }
    let factor = psd_factor(tau)?;
    let seed = cfg.master_seed;
    if l == 1 {
        let sqrt_tau = factor[(0, 0)];
        let t = tau[(0, 0)];
        Ok((0..cfg.reps)
            .into_par_iter()
            .map(|j| {
                let mut stream = SeededStream::new(seed, j as u64);
                let g = stream.normal();
                let e = if k > 1 { stream.chi_square(k - 1).expect("df >= 1") } else { 0.0 };
                psi0_from_draw_l1(&DrawL1 { g, e, w1: 1.0, w2: 0.0, w3: 1.0 }, sqrt_tau, t)
            })
            .collect())
    } else {
        Ok((0..cfg.reps)
            .into_par_iter()
            .map(|j| {
                let mut stream = SeededStream::new(seed, j as u64);
                let g: Vec<f64> = (0..l).map(|_| stream.normal()).collect();
                let e = if k > l { stream.chi_square(k - l).expect("df >= 1") } else { 0.0 };
                let d1 = g.iter().map(|x| x * x).sum::<f64>() + e;
                let d2 = factor.matmul_vec(&g);
                psi0(d1, &d2, tau)
            })
            .collect())
    }
}

fn order_stat(draws: &[f64], alpha: f64) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    sorted[order_stat_index(sorted.len(), alpha)]
}

/// Conditional critical value of the MCLR test on the tabulation scale:
/// `(n-k)` times the `ceil((1-alpha) B)`-th ascending order statistic of
/// the `psi1` draws at the given conditioning matrix.
pub fn critval_mclr(
    n: usize,
    k: usize,
    l: usize,
    tau: &SymMatrix,
    cfg: &McConfig,
) -> Result<f64> {
    let draws = psi1_draws(n, k, l, tau, cfg)?;
    Ok((n - k) as f64 * order_stat(&draws, cfg.alpha))
}

/// Conditional critical value of the conventional CLR test: the
/// `ceil((1-alpha) B)`-th ascending order statistic of the `psi0` draws.
pub fn critval_clr(k: usize, l: usize, tau: &SymMatrix, cfg: &McConfig) -> Result<f64> {
    let draws = psi0_draws(k, l, tau, cfg)?;
    Ok(order_stat(&draws, cfg.alpha))
}

fn decision_from_draws(
    statistic: f64,
    mut draws: Vec<f64>,
    conditioning_tau: SymMatrix,
    cfg: &McConfig,
) -> TestDecision {
    let exceed = draws.iter().filter(|&&x| x >= statistic).count();
    let pvalue = (1 + exceed) as f64 / (draws.len() + 1) as f64;
    draws.sort_unstable_by(f64::total_cmp);
    let critical_value = draws[order_stat_index(draws.len(), cfg.alpha)];
    TestDecision {
        statistic,
        critical_value,
        pvalue,
        reject: statistic >= critical_value,
        alpha: cfg.alpha,
        reps: cfg.reps,
        master_seed: cfg.master_seed,
        conditioning_tau,
    }
}

/// The MCLR test: reject when `LR1/(n-k)` reaches the conditional
/// Monte-Carlo critical value at the estimated conditioning matrix.
pub fn mclr_test(data: &IvData, h: &Hypothesis, cfg: &McConfig) -> Result<TestDecision> {
    let g = gram_pair(data)?;
    mclr_test_from_gram(&g, h, cfg)
}

pub(crate) fn mclr_test_from_gram(
    g: &GramPair,
    h: &Hypothesis,
    cfg: &McConfig,
) -> Result<TestDecision> {
    let statistic = lr1_statistic(g, h)?;
    let tau = tau_hat(g, h)?;
    let draws = psi1_draws(g.n, g.k, h.l(), &tau, cfg)?;
    Ok(decision_from_draws(statistic, draws, tau, cfg))
}

/// The conventional plug-in CLR test: the unscaled statistic `LR1` against
/// the known-covariance critical value function at the estimated
/// conditioning matrix. Loses similarity when instruments are many; kept
/// as the comparator.
pub fn clr_test_conventional(
    data: &IvData,
    h: &Hypothesis,
    cfg: &McConfig,
) -> Result<TestDecision> {
    let g = gram_pair(data)?;
    clr_test_from_gram(&g, h, cfg)
}

pub(crate) fn clr_test_from_gram(
    g: &GramPair,
    h: &Hypothesis,
    cfg: &McConfig,
) -> Result<TestDecision> {
    let statistic = (g.n - g.k) as f64 * lr1_statistic(g, h)?;
    let tau = tau_hat(g, h)?;
    let draws = psi0_draws(g.k, h.l(), &tau, cfg)?;
    Ok(decision_from_draws(statistic, draws, tau, cfg))
}

/// The infeasible oracle MCLR test for a known error covariance: identical
/// statistic, but conditioning on the true standardized first-stage Gram
/// matrix. Exactly similar under normal errors, which makes it the
/// strongest correctness check in the harness.
pub fn oracle_mclr_test(
    data: &IvData,
    h: &Hypothesis,
    omega: &SymMatrix,
    cfg: &McConfig,
) -> Result<TestDecision> {
    let g = gram_pair(data)?;
    oracle_mclr_test_from_gram(&g, h, omega, cfg)
}

pub(crate) fn oracle_mclr_test_from_gram(
    g: &GramPair,
    h: &Hypothesis,
    omega: &SymMatrix,
    cfg: &McConfig,
) -> Result<TestDecision> {
    let statistic = lr1_statistic(g, h)?;
    let moments = oracle_six_moments(g, h, omega)?;
    let tau = moments.d3.clone();
    let draws = psi1_draws(g.n, g.k, h.l(), &tau, cfg)?;
    Ok(decision_from_draws(statistic, draws, tau, cfg))
}

/// Shared-draw evaluation grid for critical-value tabulation: one set of
/// per-replication primitives per instrument count, evaluated at every
/// requested conditioning scalar, so columns vary smoothly in tau and the
/// two panels share their bar-block randomness.
pub(crate) struct SharedDrawColumn {
    n: usize,
    k: usize,
    draws: Vec<DrawL1>,
}

impl SharedDrawColumn {
    pub(crate) fn generate(n: usize, k: usize, master_seed: u64, reps: usize) -> Self {
        let draws: Vec<DrawL1> = (0..reps)
            .into_par_iter()
            .map(|j| {
                let mut stream = SeededStream::new(master_seed, j as u64);
                draw_l1(&mut stream, k, n - k)
            })
            .collect();
        SharedDrawColumn { n, k, draws }
    }

    /// Tabulation-scale MCLR critical value at conditioning scalar `tau`.
    pub(crate) fn critval_mclr(&self, tau: f64, alpha: f64) -> f64 {
        let st = tau.sqrt();
        let vals: Vec<f64> =
            self.draws.par_iter().map(|d| psi1_from_draw_l1(d, st, tau)).collect();
        (self.n - self.k) as f64 * order_stat(&vals, alpha)
    }

    /// Conventional CLR critical value at conditioning scalar `tau`.
    pub(crate) fn critval_clr(&self, tau: f64, alpha: f64) -> f64 {
        let st = tau.sqrt();
        let vals: Vec<f64> =
            self.draws.par_iter().map(|d| psi0_from_draw_l1(d, st, tau)).collect();
        order_stat(&vals, alpha)
    }
}
