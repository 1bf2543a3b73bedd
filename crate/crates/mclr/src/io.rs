//! File formats: dataset CSV ingestion, result CSV writers with provenance
//! headers, and the power-curve SVG. All writers build the full byte string
//! first so outputs are reproducible byte-for-byte for fixed seeds.
//!
//! Dataset schema: a header row naming the columns `y`, `y2_1..y2_l`,
//! `z_1..z_k`, and optionally `w_1..w_p` (any column order, indices
//! contiguous from 1); one observation per row; UTF-8, comma-separated,
//! decimal points.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SymMatrix};
use crate::simulation::{CritvalTable, PowerCurve, SizeResult, StaigerStockDesign};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A parsed dataset before model-shape validation, so that diagnostics can
/// run on files that a test invocation would reject (for instance nearly
/// saturated instrument blocks).
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub y: Vec<f64>,
    /// endogenous columns, possibly empty (diagnostics only need Z)
    pub y2: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub w: Option<Vec<Vec<f64>>>,
}

impl RawDataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn z_matrix(&self) -> Matrix {
        columns_to_matrix(&self.z)
    }

    pub fn w_matrix(&self) -> Option<Matrix> {
        self.w.as_ref().map(|w| columns_to_matrix(w))
    }

    /// Validate into test-ready data (requires at least one endogenous
    /// column and n > k + l).
    pub fn into_iv_data(self) -> Result<crate::statistics::IvData> {
        if self.y2.is_empty() {
            return Err(Error::InvalidInput(
                "dataset has no y2_* columns; nothing to test".into(),
            ));
        }
        let y2 = columns_to_matrix(&self.y2);
        let z = columns_to_matrix(&self.z);
        let w = self.w.as_ref().map(|w| columns_to_matrix(w));
        crate::statistics::IvData::new(self.y, y2, z, w)
    }
}

fn columns_to_matrix(cols: &[Vec<f64>]) -> Matrix {
    let n = cols[0].len();
    Matrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColumnKind {
    Outcome,
    Endogenous(usize),
    Instrument(usize),
    Exogenous(usize),
}

fn classify_header(name: &str) -> Option<ColumnKind> {
    let name = name.trim();
    if name == "y" {
        return Some(ColumnKind::Outcome);
    }
    for (prefix, make) in [
        ("y2_", ColumnKind::Endogenous as fn(usize) -> ColumnKind),
        ("z_", ColumnKind::Instrument as fn(usize) -> ColumnKind),
        ("w_", ColumnKind::Exogenous as fn(usize) -> ColumnKind),
    ] {
        if let Some(rest) = name.strip_prefix(prefix) {
            if let Ok(idx) = rest.parse::<usize>() {
                if idx >= 1 {
                    return Some(make(idx - 1));
                }
            }
            return None;
        }
    }
    None
}

/// Read a dataset CSV; parse failures carry 1-based file line numbers.
pub fn read_dataset(path: &Path) -> Result<RawDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(std::io::Error::new(
                std::io::ErrorKind::Other,
                format!("{}: {e}", path.display()),
            )),
            _ => Error::Parse { line: 1, message: e.to_string() },
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    let mut kinds = Vec::with_capacity(headers.len());
    for name in headers.iter() {
        match classify_header(name) {
            Some(kind) => kinds.push(kind),
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!(
                        "unrecognized column '{name}' (expected y, y2_<i>, z_<i>, or w_<i>)"
                    ),
                })
            }
        }
    }
    let count_of = |f: &dyn Fn(&ColumnKind) -> Option<usize>| -> Result<usize> {
        let idx: Vec<usize> = kinds.iter().filter_map(|k| f(k)).collect();
        let mut seen = vec![false; idx.len()];
        for &i in &idx {
            if i >= idx.len() || seen[i] {
                return Err(Error::Parse {
                    line: 1,
                    message: "column indices must be contiguous from 1 with no duplicates".into(),
                });
            }
            seen[i] = true;
        }
        Ok(idx.len())
    };
    let l = count_of(&|k| match k {
        ColumnKind::Endogenous(i) => Some(*i),
        _ => None,
    })?;
    let k_count = count_of(&|k| match k {
        ColumnKind::Instrument(i) => Some(*i),
        _ => None,
    })?;
    let p = count_of(&|k| match k {
        ColumnKind::Exogenous(i) => Some(*i),
        _ => None,
    })?;
    if !kinds.contains(&ColumnKind::Outcome) {
        return Err(Error::Parse { line: 1, message: "missing outcome column 'y'".into() });
    }
    if kinds.iter().filter(|k| matches!(k, ColumnKind::Outcome)).count() > 1 {
        return Err(Error::Parse { line: 1, message: "duplicate outcome column 'y'".into() });
    }
    if k_count == 0 {
        return Err(Error::Parse { line: 1, message: "no instrument columns z_*".into() });
    }

    let mut y = Vec::new();
    let mut y2 = vec![Vec::new(); l];
    let mut z = vec![Vec::new(); k_count];
    let mut w = vec![Vec::new(); p];
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Parse { line, message: e.to_string() }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != kinds.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", kinds.len(), record.len()),
            });
        }
        for (field, kind) in record.iter().zip(kinds.iter()) {
            let value: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("cannot parse '{field}' as a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite value '{field}'"),
                });
            }
            match kind {
                ColumnKind::Outcome => y.push(value),
                ColumnKind::Endogenous(i) => y2[*i].push(value),
                ColumnKind::Instrument(i) => z[*i].push(value),
                ColumnKind::Exogenous(i) => w[*i].push(value),
            }
        }
    }
    if y.is_empty() {
        return Err(Error::Parse { line: 1, message: "no data rows".into() });
    }
    Ok(RawDataset { y, y2, z, w: if p > 0 { Some(w) } else { None } })
}

/// Read a headerless square numeric CSV as a symmetric matrix (used for a
/// known error covariance). Asymmetry beyond 1e-8 relative is rejected.
pub fn read_sym_matrix(path: &Path) -> Result<SymMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io(std::io::Error::new(
            std::io::ErrorKind::Other,
            format!("{}: {e}", path.display()),
        )))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Parse { line, message: e.to_string() }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: Vec<f64> = record
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("cannot parse '{f}' as a number"),
                })
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    let dim = rows.len();
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Parse { line: 1, message: "matrix file must be square".into() });
    }
    let m = Matrix::from_fn(dim, dim, |i, j| rows[i][j]);
    let scale = m.max_abs().max(1.0);
    for i in 0..dim {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-8 * scale {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("matrix is not symmetric at ({i},{j})"),
                });
            }
        }
    }
    Ok(SymMatrix::symmetrize(&m))
}

/// Provenance block written at the top of every output file as `#` comment
/// lines: version, command, seeds, replication counts, design parameters.
#[derive(Debug, Clone, Default)]
pub struct Provenance {
    entries: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(command: &str) -> Self {
        let mut p = Provenance::default();
        p.entries.push(("generator".into(), format!("mclr {VERSION}")));
        p.entries.push(("command".into(), command.into()));
        p
    }

    pub fn push(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn header(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "# {k}: {v}");
        }
        s
    }
}

fn fmt_grid<T: std::fmt::Display>(grid: &[T]) -> String {
    grid.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Critical-value table CSV: rows are tau values, columns are instrument
/// counts, header row carries the k grid.
pub fn critval_csv(table: &CritvalTable) -> String {
    let mut prov = Provenance::new("critval");
    prov.push("which", table.panel.label())
        .push("n", table.n)
        .push("alpha", table.alpha)
        .push("reps", table.reps)
        .push("seed", table.master_seed)
        .push("k-grid", fmt_grid(&table.k_list))
        .push("tau-grid", fmt_grid(&table.tau_list));
    let mut s = prov.header();
    s.push_str("tau");
    for k in &table.k_list {
        let _ = write!(s, ",k={k}");
    }
    s.push('\n');
    for (ri, tau) in table.tau_list.iter().enumerate() {
        let _ = write!(s, "{tau}");
        for ci in 0..table.k_list.len() {
            let _ = write!(s, ",{:.6}", table.values[ri][ci]);
        }
        s.push('\n');
    }
    s
}

/// Size-experiment CSV: one row for the design, a rate and Monte-Carlo
/// standard error column per test.
pub fn size_csv(
    design: &StaigerStockDesign,
    results: &[SizeResult],
    inner_reps: usize,
    master_seed: u64,
) -> String {
    let mut prov = Provenance::new("sim size");
    prov.push("n", design.n)
        .push("k", design.k)
        .push("rho", design.rho)
        .push("delta2", design.delta2)
        .push("beta0", design.beta0)
        .push("design-seed", design.design_seed)
        .push("seed", master_seed)
        .push("inner-reps", inner_reps);
    if let Some(r) = results.first() {
        prov.push("reps", r.reps).push("alpha", r.alpha);
    }
    let mut s = prov.header();
    s.push_str("n,k,rho,delta2,alpha,reps");
    for r in results {
        let _ = write!(s, ",{}_rate,{}_se", r.test.label(), r.test.label());
    }
    s.push('\n');
    if let Some(first) = results.first() {
        let _ = write!(
            s,
            "{},{},{},{},{},{}",
            design.n, design.k, design.rho, design.delta2, first.alpha, first.reps
        );
        for r in results {
            let _ = write!(s, ",{:.6},{:.6}", r.rejection_rate, r.mc_se);
        }
        s.push('\n');
    }
    s
}

/// Power-curve CSV: one row per grid point, a rate column per test.
pub fn power_csv(
    design: &StaigerStockDesign,
    curve: &PowerCurve,
    master_seed: u64,
) -> String {
    let mut prov = Provenance::new("sim power");
    prov.push("n", design.n)
        .push("k", design.k)
        .push("rho", design.rho)
        .push("delta2", design.delta2)
        .push("beta0", design.beta0)
        .push("design-seed", design.design_seed)
        .push("seed", master_seed)
        .push("alpha", curve.alpha)
        .push("calib-reps", curve.calib_reps)
        .push("power-reps", curve.power_reps);
    for (ti, t) in curve.tests.iter().enumerate() {
        prov.push(
            &format!("calibrated-critval-{}", t.label()),
            format!("{:.6}", curve.calibrated_critvals[ti]),
        );
    }
    let mut s = prov.header();
    s.push_str("delta");
    for t in &curve.tests {
        let _ = write!(s, ",{}_rate", t.label());
    }
    s.push('\n');
    for (di, delta) in curve.delta_grid.iter().enumerate() {
        let _ = write!(s, "{delta}");
        for ti in 0..curve.tests.len() {
            let _ = write!(s, ",{:.6}", curve.rates[ti][di]);
        }
        s.push('\n');
    }
    s
}

const SVG_COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Static 800x600 line chart of the power curves: one polyline per test,
/// axes labeled with the alternative offset and the rejection rate.
pub fn power_svg(design: &StaigerStockDesign, curve: &PowerCurve) -> String {
    let (width, height) = (800.0, 600.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 60.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let xmin = *curve.delta_grid.first().unwrap();
    let xmax = *curve.delta_grid.last().unwrap();
    let xspan = (xmax - xmin).max(f64::MIN_POSITIVE);
    let xpos = |x: f64| left + (x - xmin) / xspan * plot_w;
    let ypos = |y: f64| top + (1.0 - y) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">calibrated power, n={} k={} rho={} delta2={}</text>"#,
        left + plot_w / 2.0,
        design.n,
        design.k,
        design.rho,
        design.delta2
    );
    // axes
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        top + plot_h,
        left + plot_w,
        top + plot_h
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.1}" stroke="black"/>"#,
        top + plot_h
    );
    // y ticks at 0, 0.25, ..., 1
    for i in 0..=4 {
        let v = i as f64 * 0.25;
        let y = ypos(v);
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{left}" y2="{y:.1}" stroke="black"/>"#,
            left - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="12">{v:.2}</text>"#,
            left - 8.0,
            y + 4.0
        );
        if i > 0 {
            let _ = writeln!(
                s,
                r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##,
                left + plot_w
            );
        }
    }
    // x ticks at five evenly spaced grid values
    for i in 0..=4 {
        let v = xmin + xspan * i as f64 / 4.0;
        let x = xpos(v);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#,
            top + plot_h,
            top + plot_h + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12">{v:.2}</text>"#,
            top + plot_h + 20.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="14">delta</text>"#,
        left + plot_w / 2.0,
        height - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="14" transform="rotate(-90 18 {:.1})">rejection rate</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    for (ti, t) in curve.tests.iter().enumerate() {
        let color = SVG_COLORS[ti % SVG_COLORS.len()];
        let points: Vec<String> = curve
            .delta_grid
            .iter()
            .enumerate()
            .map(|(di, &d)| format!("{:.2},{:.2}", xpos(d), ypos(curve.rates[ti][di])))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 16.0 * ti as f64 + 8.0;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            left + plot_w - 130.0,
            left + plot_w - 100.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{}</text>"#,
            left + plot_w - 92.0,
            ly + 4.0,
            t.label()
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Minimal `key = value` config file: one pair per line, `#` comments and
/// blank lines ignored. Flags always win over config entries.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    map: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: idx as u64 + 1,
                    message: format!("expected 'key = value', found '{raw}'"),
                });
            };
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigFile { map })
    }

    pub fn get_str(&self, key: &str) -> Option<String> {
        self.map.get(key).cloned()
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| Error::Parse {
                line: 1,
                message: format!("config key '{key}': cannot parse '{v}'"),
            }),
        }
    }
}
