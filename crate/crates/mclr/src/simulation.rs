//! Simulation harness: fixed-instrument designs with targeted first-stage
//! strength, size experiments, calibrated power curves, and critical-value
//! tabulation over (tau, k) grids.
//!
//! The design freezes one instrument matrix `Z = [1, Z2, Z2^2, Z2^3,
//! k-4 standard normal columns]` and a coefficient direction scaled so that
//! the population first-stage F statistic `pi2' Z'Z pi2` (unit reduced-form
//! second-stage variance) hits the requested `delta2`. Structural errors
//! `(u, v2)` are unit-variance bivariate normal with correlation `rho`.
//!
//! Every replication owns one random stream keyed by its index, and every
//! nested Monte-Carlo loop derives its own sub-master seed, so results are
//! byte-identical for a fixed master seed regardless of thread count.

use crate::conditional::{
    clr_test_from_gram, mclr_test_from_gram, oracle_mclr_test_from_gram, McConfig,
    SharedDrawColumn,
};
use crate::error::{Error, Result};
use crate::linalg::{thin_qr, Matrix, SymMatrix};
use crate::rng::{derive_seed, SeededStream};
use crate::statistics::{gram_pair_from_q, lr1_statistic, Hypothesis, IvData};
use rayon::prelude::*;

/// Seed-derivation tags for the nested Monte-Carlo scopes.
const TAG_SIZE_REP: u64 = 1;
const TAG_POWER_CALIB: u64 = 2;
const TAG_POWER_REP: u64 = 3;
const TAG_CRITVAL_COLUMN: u64 = 4;

/// Which tests a simulation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    Mclr,
    ClrConventional,
    MclrOracle,
}

impl TestKind {
    pub fn label(self) -> &'static str {
        match self {
            TestKind::Mclr => "mclr",
            TestKind::ClrConventional => "clr",
            TestKind::MclrOracle => "mclr-oracle",
        }
    }

    fn tag(self) -> u64 {
        match self {
            TestKind::Mclr => 0,
            TestKind::ClrConventional => 1,
            TestKind::MclrOracle => 2,
        }
    }
}

/// Which critical-value panel to tabulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Panel {
    Mclr,
    Clr,
}

impl Panel {
    pub fn label(self) -> &'static str {
        match self {
            Panel::Mclr => "mclr",
            Panel::Clr => "clr",
        }
    }
}

/// Fixed-Z simulation design with targeted first-stage strength.
#[derive(Debug, Clone)]
pub struct StaigerStockDesign {
    pub n: usize,
    pub k: usize,
    pub rho: f64,
    pub delta2: f64,
    pub beta0: f64,
    pub design_seed: u64,
    z: Matrix,
    pi2: Vec<f64>,
    // cached across replications: orthonormal basis of col(Z) and Z * pi2
    q: Matrix,
    zpi: Vec<f64>,
}

impl StaigerStockDesign {
    pub fn z(&self) -> &Matrix {
        &self.z
    }

    pub fn pi2(&self) -> &[f64] {
        &self.pi2
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    /// Reduced-form error covariance implied by unit-variance structural
    /// errors with correlation `rho`, at structural coefficient `beta`.
    pub fn implied_omega(&self, beta: f64) -> SymMatrix {
        let mut o = SymMatrix::zeros(2);
        o.set_sym(0, 0, 1.0 + 2.0 * self.rho * beta + beta * beta);
        o.set_sym(1, 0, self.rho + beta);
        o.set_sym(1, 1, 1.0);
        o
    }
}

/// Build the design: draw `Z` once from `design_seed`, freeze it, and scale
/// the equal-weights coefficient direction `(1,...,1)/sqrt(k)` so that
/// `pi2' Z'Z pi2 = delta2`. Powers of `Z2` are used raw, not standardized.
pub fn build_design(
    n: usize,
    k: usize,
    rho: f64,
    delta2: f64,
    beta0: f64,
    design_seed: u64,
) -> Result<StaigerStockDesign> {
    if k < 4 {
        return Err(Error::InvalidDesign(format!("need k >= 4 instruments, got {k}")));
    }
    if n <= k + 1 {
        return Err(Error::InvalidDesign(format!("need n > k + 1, got n = {n}, k = {k}")));
    }
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::InvalidDesign(format!("need rho in (-1, 1), got {rho}")));
    }
    if !(delta2 > 0.0) {
        return Err(Error::InvalidDesign(format!("need delta2 > 0, got {delta2}")));
    }
    let mut stream = SeededStream::new(design_seed, 0);
    let z2: Vec<f64> = (0..n).map(|_| stream.normal()).collect();
    let mut z = Matrix::zeros(n, k);
    for i in 0..n {
        z[(i, 0)] = 1.0;
        z[(i, 1)] = z2[i];
        z[(i, 2)] = z2[i] * z2[i];
        z[(i, 3)] = z2[i] * z2[i] * z2[i];
    }
    for j in 4..k {
        for i in 0..n {
            z[(i, j)] = stream.normal();
        }
    }
    let u: Vec<f64> = vec![1.0 / (k as f64).sqrt(); k];
    let zu = z.matmul_vec(&u);
    let quad: f64 = zu.iter().map(|x| x * x).sum();
    if !(quad > 0.0) {
        return Err(Error::InvalidDesign("degenerate instrument direction".into()));
    }
    let c = (delta2 / quad).sqrt();
    let pi2: Vec<f64> = u.iter().map(|x| c * x).collect();
    let q = thin_qr(&z)?;
    let zpi = z.matmul_vec(&pi2);
    Ok(StaigerStockDesign { n, k, rho, delta2, beta0, design_seed, z, pi2, q, zpi })
}

/// Draw the structural errors and outcomes for one replication at
/// structural coefficient `beta`. Per observation the stream yields two
/// standard normals `(z_u, z_v)` with `u = z_u` and
/// `v = rho z_u + sqrt(1-rho^2) z_v`.
fn draw_outcomes(design: &StaigerStockDesign, beta: f64, stream: &mut SeededStream) -> (Vec<f64>, Vec<f64>) {
    let n = design.n;
    let r = design.rho;
    let s = (1.0 - r * r).sqrt();
    let mut y1 = vec![0.0; n];
    let mut y2 = vec![0.0; n];
    for i in 0..n {
        let zu = stream.normal();
        let zv = stream.normal();
        let u = zu;
        let v = r * zu + s * zv;
        y2[i] = design.zpi[i] + v;
        y1[i] = y2[i] * beta + u;
    }
    (y1, y2)
}

/// One simulated sample from the design, as test-ready data with the frozen
/// instrument block.
pub fn gen_sample(design: &StaigerStockDesign, beta: f64, stream: &mut SeededStream) -> IvData {
    let (y1, y2) = draw_outcomes(design, beta, stream);
    IvData::new(y1, Matrix::from_column(&y2), design.z.clone(), None)
        .expect("design dimensions are validated at construction")
}

fn reduced_form(y1: &[f64], y2: &[f64]) -> Matrix {
    Matrix::from_fn(y1.len(), 2, |i, j| if j == 0 { y1[i] } else { y2[i] })
}

/// Empirical rejection frequency of one test over one design.
#[derive(Debug, Clone)]
pub struct SizeResult {
    pub test: TestKind,
    pub n: usize,
    pub k: usize,
    pub rho: f64,
    pub delta2: f64,
    pub alpha: f64,
    pub reps: usize,
    pub rejection_rate: f64,
    pub mc_se: f64,
}

/// Null rejection rates of the requested tests, one fresh sample per
/// replication at `beta = beta0`, with binomial Monte-Carlo standard
/// errors attached.
pub fn run_size(
    design: &StaigerStockDesign,
    tests: &[TestKind],
    reps: usize,
    cfg: &McConfig,
) -> Result<Vec<SizeResult>> {
    if tests.is_empty() {
        return Err(Error::InvalidInput("no tests requested".into()));
    }
    if reps == 0 {
        return Err(Error::InvalidInput("need at least one replication".into()));
    }
    let h = Hypothesis::new(vec![design.beta0])?;
    let omega0 = design.implied_omega(design.beta0);
    let master = cfg.master_seed();
    let flags: Vec<Vec<bool>> = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<Vec<bool>> {
            let mut stream = SeededStream::new(master, r as u64);
            let (y1, y2) = draw_outcomes(design, design.beta0, &mut stream);
            let y = reduced_form(&y1, &y2);
            let g = gram_pair_from_q(&design.q, &y, design.n, design.k);
            let mut out = Vec::with_capacity(tests.len());
            for &t in tests {
                let sub = derive_seed(
                    derive_seed(master, TAG_SIZE_REP),
                    (r as u64) * 8 + t.tag(),
                );
                let c = cfg.with_master_seed(sub);
                let decision = match t {
                    TestKind::Mclr => mclr_test_from_gram(&g, &h, &c)?,
                    TestKind::ClrConventional => clr_test_from_gram(&g, &h, &c)?,
                    TestKind::MclrOracle => oracle_mclr_test_from_gram(&g, &h, &omega0, &c)?,
                };
                out.push(decision.reject);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut results = Vec::with_capacity(tests.len());
    for (ti, &t) in tests.iter().enumerate() {
        let count = flags.iter().filter(|row| row[ti]).count();
        let rate = count as f64 / reps as f64;
        results.push(SizeResult {
            test: t,
            n: design.n,
            k: design.k,
            rho: design.rho,
            delta2: design.delta2,
            alpha: cfg.alpha(),
            reps,
            rejection_rate: rate,
            mc_se: (rate * (1.0 - rate) / reps as f64).sqrt(),
        });
    }
    Ok(results)
}

/// Calibrated power curves: per-test rejection rates over a grid of
/// alternatives, against critical values set at the empirical null
/// `(1-alpha)` quantile of each test's statistic.
#[derive(Debug, Clone)]
pub struct PowerCurve {
    pub tests: Vec<TestKind>,
    pub delta_grid: Vec<f64>,
    /// `rates[t][d]` = rejection rate of test `t` at `beta0 + delta_grid[d]`.
    pub rates: Vec<Vec<f64>>,
    pub calibrated_critvals: Vec<f64>,
    pub calib_reps: usize,
    pub power_reps: usize,
    pub alpha: f64,
}

impl PowerCurve {
    pub fn mc_se(&self, rate: f64) -> f64 {
        (rate * (1.0 - rate) / self.power_reps as f64).sqrt()
    }
}

/// The statistic each test compares against its calibrated critical value:
/// `LR1/(n-k)` for the MCLR variants, the unscaled `LR1` for the
/// conventional CLR (a fixed monotone rescale, so calibrated decisions
/// coincide; both are reported for completeness).
fn test_statistic(kind: TestKind, base: f64, nk: usize) -> f64 {
    match kind {
        TestKind::Mclr | TestKind::MclrOracle => base,
        TestKind::ClrConventional => nk as f64 * base,
    }
}

/// Two-phase calibrated power experiment; phase 1 draws `calib_reps` null
/// samples to pin each test's critical value, phase 2 draws `power_reps`
/// samples per grid point. Within phase 2 one noise realization per
/// replication is shared across the whole grid, so curves are smooth in
/// `delta` and monotonicity checks are meaningful.
pub fn run_power(
    design: &StaigerStockDesign,
    delta_grid: &[f64],
    tests: &[TestKind],
    calib_reps: usize,
    power_reps: usize,
    cfg: &McConfig,
) -> Result<PowerCurve> {
    if tests.is_empty() {
        return Err(Error::InvalidInput("no tests requested".into()));
    }
    if !delta_grid.iter().any(|d| *d == 0.0) {
        return Err(Error::InvalidInput("delta grid must contain 0".into()));
    }
    if delta_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("delta grid must be strictly increasing".into()));
    }
    if calib_reps < 100 || power_reps < 100 {
        return Err(Error::InvalidInput("need at least 100 replications per phase".into()));
    }
    let h = Hypothesis::new(vec![design.beta0])?;
    let master = cfg.master_seed();
    let nk = design.n - design.k;

    // Phase 1: null statistic distribution per test
    let calib_master = derive_seed(master, TAG_POWER_CALIB);
    let base_stats: Vec<f64> = (0..calib_reps)
        .into_par_iter()
        .map(|r| -> Result<f64> {
            let mut stream = SeededStream::new(calib_master, r as u64);
            let (y1, y2) = draw_outcomes(design, design.beta0, &mut stream);
            let y = reduced_form(&y1, &y2);
            let g = gram_pair_from_q(&design.q, &y, design.n, design.k);
            lr1_statistic(&g, &h)
        })
        .collect::<Result<Vec<_>>>()?;
    let calibrated_critvals: Vec<f64> = tests
        .iter()
        .map(|&t| {
            let mut stats: Vec<f64> =
                base_stats.iter().map(|&b| test_statistic(t, b, nk)).collect();
            stats.sort_unstable_by(f64::total_cmp);
            let rank =
                (((1.0 - cfg.alpha()) * calib_reps as f64 - 1e-9).ceil() as usize).clamp(1, calib_reps);
            stats[rank - 1]
        })
        .collect();

    // Phase 2: one noise realization per replication, swept over the grid
    let power_master = derive_seed(master, TAG_POWER_REP);
    let reject_counts: Vec<Vec<usize>> = (0..power_reps)
        .into_par_iter()
        .map(|r| -> Result<Vec<usize>> {
            let mut stream = SeededStream::new(power_master, r as u64);
            let rho = design.rho;
            let s = (1.0 - rho * rho).sqrt();
            let n = design.n;
            let mut u = vec![0.0; n];
            let mut y2 = vec![0.0; n];
            for i in 0..n {
                let zu = stream.normal();
                let zv = stream.normal();
                u[i] = zu;
                y2[i] = design.zpi[i] + rho * zu + s * zv;
            }
            let mut counts = vec![0usize; tests.len() * delta_grid.len()];
            for (di, &delta) in delta_grid.iter().enumerate() {
                let beta = design.beta0 + delta;
                let y1: Vec<f64> = (0..n).map(|i| y2[i] * beta + u[i]).collect();
                let y = reduced_form(&y1, &y2);
                let g = gram_pair_from_q(&design.q, &y, design.n, design.k);
                let base = lr1_statistic(&g, &h)?;
                for (ti, &t) in tests.iter().enumerate() {
                    if test_statistic(t, base, nk) >= calibrated_critvals[ti] {
                        counts[ti * delta_grid.len() + di] = 1;
                    }
                }
            }
            Ok(counts)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rates = vec![vec![0.0; delta_grid.len()]; tests.len()];
    for row in &reject_counts {
        for ti in 0..tests.len() {
            for di in 0..delta_grid.len() {
                rates[ti][di] += row[ti * delta_grid.len() + di] as f64;
            }
        }
    }
    for row in rates.iter_mut() {
        for v in row.iter_mut() {
            *v /= power_reps as f64;
        }
    }
    Ok(PowerCurve {
        tests: tests.to_vec(),
        delta_grid: delta_grid.to_vec(),
        rates,
        calibrated_critvals,
        calib_reps,
        power_reps,
        alpha: cfg.alpha(),
    })
}

/// Default alternative grid for power experiments: -1.0 to 1.0 in steps of
/// 0.05 (41 points, includes 0).
pub fn default_delta_grid() -> Vec<f64> {
    (0..41).map(|i| -1.0 + 0.05 * i as f64).collect()
}

/// Critical values over a (tau, k) grid; rows follow `tau_list`, columns
/// follow `k_list`.
#[derive(Debug, Clone)]
pub struct CritvalTable {
    pub panel: Panel,
    pub n: usize,
    pub k_list: Vec<usize>,
    pub tau_list: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub alpha: f64,
    pub reps: usize,
    pub master_seed: u64,
}

/// Tabulate conditional critical values for scalar conditioning (l = 1).
/// Draws are shared within a column (fixed k) so each column varies
/// smoothly in tau, and the two panels share their bar-block randomness
/// through identical per-replication streams.
pub fn tabulate_critvals(
    n: usize,
    k_list: &[usize],
    tau_list: &[f64],
    alpha: f64,
    cfg: &McConfig,
    panel: Panel,
) -> Result<CritvalTable> {
    if k_list.is_empty() || tau_list.is_empty() {
        return Err(Error::InvalidInput("empty tabulation grid".into()));
    }
    for &k in k_list {
        if k < 1 || n <= k + 1 {
            return Err(Error::InvalidInput(format!(
                "each k must satisfy 1 <= k and n > k + 1; got k = {k}, n = {n}"
            )));
        }
    }
    for &t in tau_list {
        if !(t >= 0.0) {
            return Err(Error::InvalidInput(format!("tau values must be >= 0, got {t}")));
        }
    }
    let mut values = vec![vec![0.0; k_list.len()]; tau_list.len()];
    for (ci, &k) in k_list.iter().enumerate() {
        let col_master = derive_seed(
            derive_seed(cfg.master_seed(), TAG_CRITVAL_COLUMN),
            k as u64,
        );
        let col = SharedDrawColumn::generate(n, k, col_master, cfg.reps());
        for (ri, &tau) in tau_list.iter().enumerate() {
            values[ri][ci] = match panel {
                Panel::Mclr => col.critval_mclr(tau, alpha),
                Panel::Clr => col.critval_clr(tau, alpha),
            };
        }
    }
    Ok(CritvalTable {
        panel,
        n,
        k_list: k_list.to_vec(),
        tau_list: tau_list.to_vec(),
        values,
        alpha,
        reps: cfg.reps(),
        master_seed: cfg.master_seed(),
    })
}
