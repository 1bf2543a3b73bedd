//! Command-line front end: dataset testing, critical-value tabulation,
//! size/power experiments, and the instrument leverage diagnostic.
//!
//! Every numeric flag can also come from an optional `key = value` config
//! file (`--config`); explicit flags win. `--threads` is a wall-time hint
//! only: outputs are byte-identical for fixed seeds at any worker count.
//!
//! Exit codes: 0 on success (whatever the test decision), 2 on input or
//! parse errors, 3 on violated numeric preconditions, 4 on internal
//! numerical failures.

use crate::conditional::{clr_test_conventional, mclr_test, oracle_mclr_test, McConfig, TestDecision};
use crate::error::{Error, Result};
use crate::io::{
    critval_csv, power_csv, power_svg, read_dataset, read_sym_matrix, size_csv, ConfigFile,
    Provenance,
};
use crate::linalg::thin_qr;
use crate::simulation::{
    build_design, default_delta_grid, run_power, run_size, tabulate_critvals, Panel, TestKind,
};
use crate::statistics::{leverage_diag, partial_out, Hypothesis};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

const DEFAULT_ALPHA: f64 = 0.05;
const DEFAULT_REPS: usize = 10_000;
const DEFAULT_SEED: u64 = 42;
const DEFAULT_DESIGN_SEED: u64 = 1234;
const DEFAULT_K_GRID: &str = "1,2,3,4,5,10,20,50";
const DEFAULT_TAU_GRID: &str = "1,5,10,20,50,75,100,50000";

#[derive(Debug, Parser)]
#[command(name = "mclr", version, about = "Weak-instrument robust IV testing with Monte-Carlo conditional critical values")]
pub struct Cli {
    /// Worker thread count hint; affects wall time only, never results
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Optional key = value config file; explicit flags win
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test beta = beta0 on a CSV dataset
    Test(TestArgs),
    /// Tabulate conditional critical values over a (tau, k) grid
    Critval(CritvalArgs),
    /// Simulation experiments on the fixed-instrument design
    Sim(SimArgs),
    /// Instrument leverage diagnostic for a CSV dataset
    Diag(DiagArgs),
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// Input CSV with columns y, y2_1..y2_l, z_1..z_k, optional w_1..w_p
    #[arg(long)]
    pub data: PathBuf,
    /// Hypothesized beta0 (comma-separated for l > 1); defaults to zeros
    #[arg(long, allow_hyphen_values = true)]
    pub beta0: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Known error covariance (headerless CSV); adds the oracle test
    #[arg(long)]
    pub omega: Option<PathBuf>,
    /// Also write the decision as CSV
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CritvalArgs {
    #[arg(long)]
    pub n: Option<usize>,
    /// Comma-separated instrument counts (columns)
    #[arg(long = "k-grid")]
    pub k_grid: Option<String>,
    /// Comma-separated conditioning values (rows)
    #[arg(long = "tau-grid")]
    pub tau_grid: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Which panel: mclr or clr
    #[arg(long)]
    pub which: Option<String>,
    /// Output CSV path (stdout when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[command(subcommand)]
    pub experiment: SimCommand,
}

#[derive(Debug, Subcommand)]
pub enum SimCommand {
    /// Null rejection rates for the configured design
    Size(SimSizeArgs),
    /// Calibrated power curves over a grid of alternatives
    Power(SimPowerArgs),
}

#[derive(Debug, Args)]
pub struct SimSizeArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub delta2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta0: Option<f64>,
    #[arg(long = "design-seed")]
    pub design_seed: Option<u64>,
    /// Outer Monte-Carlo replications
    #[arg(long)]
    pub reps: Option<usize>,
    /// Replications per conditional critical value
    #[arg(long = "inner-reps")]
    pub inner_reps: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated subset of: mclr, clr, mclr-oracle
    #[arg(long)]
    pub tests: Option<String>,
    /// Output directory for size.csv
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimPowerArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub delta2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta0: Option<f64>,
    #[arg(long = "design-seed")]
    pub design_seed: Option<u64>,
    /// Comma-separated alternatives; must include 0
    #[arg(long = "delta-grid", allow_hyphen_values = true)]
    pub delta_grid: Option<String>,
    #[arg(long = "calib-reps")]
    pub calib_reps: Option<usize>,
    #[arg(long = "power-reps")]
    pub power_reps: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated subset of: mclr, clr, mclr-oracle
    #[arg(long)]
    pub tests: Option<String>,
    /// Output directory for power.csv and power.svg
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagArgs {
    #[arg(long)]
    pub data: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    match cli.threads {
        Some(t) if t > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidInput(format!("cannot build thread pool: {e}")))?;
            pool.install(|| dispatch(cli.command, &config))
        }
        _ => dispatch(cli.command, &config),
    }
}

fn dispatch(command: Command, config: &ConfigFile) -> Result<()> {
    match command {
        Command::Test(args) => cmd_test(args, config),
        Command::Critval(args) => cmd_critval(args, config),
        Command::Sim(args) => match args.experiment {
            SimCommand::Size(a) => cmd_sim_size(a, config),
            SimCommand::Power(a) => cmd_sim_power(a, config),
        },
        Command::Diag(args) => cmd_diag(args),
    }
}

fn resolve<T>(flag: Option<T>, cfg: Option<T>, default: T) -> T {
    flag.or(cfg).unwrap_or(default)
}

fn parse_f64_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("{what}: cannot parse '{t}'")))
        })
        .collect()
}

fn parse_usize_list(text: &str, what: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidInput(format!("{what}: cannot parse '{t}'")))
        })
        .collect()
}

fn parse_tests(text: &str) -> Result<Vec<TestKind>> {
    text.split(',')
        .map(|t| match t.trim() {
            "mclr" => Ok(TestKind::Mclr),
            "clr" => Ok(TestKind::ClrConventional),
            "mclr-oracle" => Ok(TestKind::MclrOracle),
            other => Err(Error::InvalidInput(format!(
                "unknown test '{other}' (expected mclr, clr, or mclr-oracle)"
            ))),
        })
        .collect()
}

fn parse_panel(text: &str) -> Result<Panel> {
    match text {
        "mclr" => Ok(Panel::Mclr),
        "clr" => Ok(Panel::Clr),
        other => Err(Error::InvalidInput(format!("unknown panel '{other}' (expected mclr or clr)"))),
    }
}

fn fmt_tau(tau: &crate::linalg::SymMatrix) -> String {
    if tau.dim() == 1 {
        format!("{:.6}", tau[(0, 0)])
    } else {
        let mut rows = Vec::new();
        for i in 0..tau.dim() {
            let row: Vec<String> = (0..tau.dim()).map(|j| format!("{:.6}", tau[(i, j)])).collect();
            rows.push(row.join(","));
        }
        rows.join(";")
    }
}

fn print_decision(label: &str, d: &TestDecision) {
    println!("{label}-statistic: {:.6}", d.statistic);
    println!("{label}-conditioning-tau: {}", fmt_tau(&d.conditioning_tau));
    println!("{label}-critical-value: {:.6}", d.critical_value);
    println!("{label}-pvalue: {:.6}", d.pvalue);
    println!("{label}-reject: {}", d.reject);
}

fn cmd_test(args: TestArgs, config: &ConfigFile) -> Result<()> {
    let alpha = resolve(args.alpha, config.get_parsed("alpha")?, DEFAULT_ALPHA);
    let reps = resolve(args.reps, config.get_parsed("reps")?, DEFAULT_REPS);
    let seed = resolve(args.seed, config.get_parsed("seed")?, DEFAULT_SEED);
    let raw = read_dataset(&args.data)?;
    let mut data = raw.into_iv_data()?;
    if data.w().is_some() {
        data = partial_out(&data)?;
    }
    let l = data.l();
    let beta0_text = args.beta0.or(config.get_str("beta0"));
    let beta0 = match beta0_text {
        Some(text) => {
            let v = parse_f64_list(&text, "beta0")?;
            if v.len() != l {
                return Err(Error::InvalidInput(format!(
                    "beta0 has {} entries but the dataset has l = {l} endogenous columns",
                    v.len()
                )));
            }
            v
        }
        None => vec![0.0; l],
    };
    let h = Hypothesis::new(beta0.clone())?;
    let cfg = McConfig::new(reps, alpha, seed)?;
    println!("n: {}", data.n());
    println!("k: {}", data.k());
    println!("l: {l}");
    println!("beta0: {}", beta0.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(","));
    println!("alpha: {alpha}");
    println!("reps: {reps}");
    println!("seed: {seed}");
    let decision = mclr_test(&data, &h, &cfg)?;
    print_decision("mclr", &decision);
    let clr = clr_test_conventional(&data, &h, &cfg)?;
    print_decision("clr", &clr);
    let oracle = match &args.omega {
        Some(path) => {
            let omega = read_sym_matrix(path)?;
            if omega.dim() != l + 1 {
                return Err(Error::InvalidInput(format!(
                    "omega must be {} x {}, got {} x {}",
                    l + 1,
                    l + 1,
                    omega.dim(),
                    omega.dim()
                )));
            }
            let d = oracle_mclr_test(&data, &h, &omega, &cfg)?;
            print_decision("mclr-oracle", &d);
            Some(d)
        }
        None => None,
    };
    if let Some(out) = &args.out {
        let mut prov = Provenance::new("test");
        prov.push("data", args.data.display())
            .push("beta0", beta0.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(","))
            .push("alpha", alpha)
            .push("reps", reps)
            .push("seed", seed);
        let mut s = prov.header();
        s.push_str("test,n,k,l,statistic,conditioning_tau,critical_value,pvalue,reject\n");
        let mut push_row = |name: &str, d: &TestDecision| {
            s.push_str(&format!(
                "{name},{},{},{l},{:.6},{},{:.6},{:.6},{}\n",
                data.n(),
                data.k(),
                d.statistic,
                fmt_tau(&d.conditioning_tau),
                d.critical_value,
                d.pvalue,
                d.reject
            ));
        };
        push_row("mclr", &decision);
        push_row("clr", &clr);
        if let Some(d) = &oracle {
            push_row("mclr-oracle", d);
        }
        std::fs::write(out, s)?;
    }
    Ok(())
}

fn cmd_critval(args: CritvalArgs, config: &ConfigFile) -> Result<()> {
    let n = resolve(args.n, config.get_parsed("n")?, 100);
    let alpha = resolve(args.alpha, config.get_parsed("alpha")?, DEFAULT_ALPHA);
    let reps = resolve(args.reps, config.get_parsed("reps")?, DEFAULT_REPS);
    let seed = resolve(args.seed, config.get_parsed("seed")?, DEFAULT_SEED);
    let k_grid_text =
        resolve(args.k_grid, config.get_str("k-grid"), DEFAULT_K_GRID.to_string());
    let tau_grid_text =
        resolve(args.tau_grid, config.get_str("tau-grid"), DEFAULT_TAU_GRID.to_string());
    let which_text = resolve(args.which, config.get_str("which"), "mclr".to_string());
    let k_list = parse_usize_list(&k_grid_text, "k-grid")?;
    let tau_list = parse_f64_list(&tau_grid_text, "tau-grid")?;
    let panel = parse_panel(&which_text)?;
    let cfg = McConfig::new(reps, alpha, seed)?;
    let table = tabulate_critvals(n, &k_list, &tau_list, alpha, &cfg, panel)?;
    let csv = critval_csv(&table);
    match &args.out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_sim_size(args: SimSizeArgs, config: &ConfigFile) -> Result<()> {
    let n = resolve(args.n, config.get_parsed("n")?, 100);
    let k = resolve(args.k, config.get_parsed("k")?, 5);
    let rho = resolve(args.rho, config.get_parsed("rho")?, 0.2);
    let delta2 = resolve(args.delta2, config.get_parsed("delta2")?, 30.0);
    let beta0 = resolve(args.beta0, config.get_parsed("beta0")?, 0.0);
    let design_seed =
        resolve(args.design_seed, config.get_parsed("design-seed")?, DEFAULT_DESIGN_SEED);
    let reps = resolve(args.reps, config.get_parsed("reps")?, DEFAULT_REPS);
    let inner_reps = resolve(args.inner_reps, config.get_parsed("inner-reps")?, DEFAULT_REPS);
    let alpha = resolve(args.alpha, config.get_parsed("alpha")?, DEFAULT_ALPHA);
    let seed = resolve(args.seed, config.get_parsed("seed")?, DEFAULT_SEED);
    let tests_text = resolve(args.tests, config.get_str("tests"), "mclr,clr".to_string());
    let tests = parse_tests(&tests_text)?;
    let design = build_design(n, k, rho, delta2, beta0, design_seed)?;
    let cfg = McConfig::new(inner_reps, alpha, seed)?;
    let results = run_size(&design, &tests, reps, &cfg)?;
    for r in &results {
        println!(
            "{}: rejection-rate {:.6} (mc-se {:.6}) over {} replications",
            r.test.label(),
            r.rejection_rate,
            r.mc_se,
            r.reps
        );
    }
    let out_dir = args.out.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    let path = out_dir.join("size.csv");
    std::fs::write(&path, size_csv(&design, &results, inner_reps, seed))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_sim_power(args: SimPowerArgs, config: &ConfigFile) -> Result<()> {
    let n = resolve(args.n, config.get_parsed("n")?, 200);
    let k = resolve(args.k, config.get_parsed("k")?, 5);
    let rho = resolve(args.rho, config.get_parsed("rho")?, 0.2);
    let delta2 = resolve(args.delta2, config.get_parsed("delta2")?, 10.0);
    let beta0 = resolve(args.beta0, config.get_parsed("beta0")?, 0.0);
    let design_seed =
        resolve(args.design_seed, config.get_parsed("design-seed")?, DEFAULT_DESIGN_SEED);
    let calib_reps = resolve(args.calib_reps, config.get_parsed("calib-reps")?, DEFAULT_REPS);
    let power_reps = resolve(args.power_reps, config.get_parsed("power-reps")?, 2500);
    let alpha = resolve(args.alpha, config.get_parsed("alpha")?, DEFAULT_ALPHA);
    let seed = resolve(args.seed, config.get_parsed("seed")?, DEFAULT_SEED);
    let tests_text = resolve(args.tests, config.get_str("tests"), "mclr".to_string());
    let tests = parse_tests(&tests_text)?;
    let delta_grid = match args.delta_grid.or(config.get_str("delta-grid")) {
        Some(text) => parse_f64_list(&text, "delta-grid")?,
        None => default_delta_grid(),
    };
    let design = build_design(n, k, rho, delta2, beta0, design_seed)?;
    let cfg = McConfig::new(calib_reps.max(100), alpha, seed)?;
    let curve = run_power(&design, &delta_grid, &tests, calib_reps, power_reps, &cfg)?;
    for (ti, t) in curve.tests.iter().enumerate() {
        println!(
            "{}: calibrated critical value {:.6}, power at grid ends {:.4} / {:.4}",
            t.label(),
            curve.calibrated_critvals[ti],
            curve.rates[ti][0],
            curve.rates[ti][curve.delta_grid.len() - 1]
        );
    }
    let out_dir = args.out.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    let csv_path = out_dir.join("power.csv");
    std::fs::write(&csv_path, power_csv(&design, &curve, seed))?;
    let svg_path = out_dir.join("power.svg");
    std::fs::write(&svg_path, power_svg(&design, &curve))?;
    println!("wrote {}", csv_path.display());
    println!("wrote {}", svg_path.display());
    Ok(())
}

fn cmd_diag(args: DiagArgs) -> Result<()> {
    let raw = read_dataset(&args.data)?;
    let n = raw.n();
    let mut z = raw.z_matrix();
    if let Some(w) = raw.w_matrix() {
        let qw = thin_qr(&w)?;
        z = z.sub(&qw.matmul(&qw.tr_matmul(&z)));
    }
    let k = z.ncols();
    let q = thin_qr(&z)?;
    let lev = leverage_diag(&q);
    println!("n: {n}");
    println!("k: {k}");
    println!("k/n: {:.6}", k as f64 / n as f64);
    println!("leverage: {lev:.6}");
    if lev > 0.5 {
        println!("caution: leverage exceeds 0.5; validity under non-normal errors is suspect");
    }
    Ok(())
}
