//! Period life tables and the age-at-death densities derived from them.
//!
//! Death counts are rebuilt from `q_x` rather than read from the source file so
//! that counts at the oldest ages stay strictly positive and are never rounded.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use thiserror::Error;

/// Standard life-table radix.
pub const DEFAULT_RADIX: f64 = 100_000.0;

/// Fractional age at death used for every closed interval and for the open one.
pub const MIDPOINT_AX: f64 = 0.5;

const RECURRENCE_TOL: f64 = 1e-9;
const RADIX_SUM_TOL: f64 = 1e-6;
const PANEL_SUM_TOL: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LifeTableError {
    #[error("q_x = {value} at year {year}, age {age} is outside [0, 1]")]
    QxOutOfRange { year: i32, age: u32, value: f64 },
    #[error("terminal q_x must equal 1 (year {year} has {value})")]
    TerminalQx { year: i32, value: f64 },
    #[error("row for year {year} sums to {sum}, expected radix {radix}")]
    RadixMismatch { year: i32, sum: f64, radix: f64 },
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("radix must be positive, got {0}")]
    Radix(f64),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, LifeTableError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Sex::Female),
            "male" | "m" => Ok(Sex::Male),
            other => Err(format!("unknown sex '{other}'")),
        }
    }
}

/// A yearly panel of period life tables for one sex.
///
/// Rows are calendar years, columns are single ages; the last column is the
/// open interval (e.g. 110+).
#[derive(Debug, Clone, PartialEq)]
pub struct LifeTableSeries {
    pub sex: Sex,
    pub years: Vec<i32>,
    pub ages: Vec<u32>,
    pub qx: DMatrix<f64>,
    pub lx: DMatrix<f64>,
    pub dx: DMatrix<f64>,
    pub radix: f64,
    /// Fractional ages at death as published in the source file, when available.
    pub ax: Option<DMatrix<f64>>,
}

impl LifeTableSeries {
    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn n_ages(&self) -> usize {
        self.ages.len()
    }

    /// Keeps the years in `first..=last`.
    pub fn slice_years(&self, first: i32, last: i32) -> Result<LifeTableSeries> {
        let idx: Vec<usize> = self
            .years
            .iter()
            .enumerate()
            .filter(|(_, &y)| y >= first && y <= last)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            return Err(LifeTableError::Shape(format!(
                "no {} years in {first}..={last}",
                self.sex
            )));
        }
        let rows = |m: &DMatrix<f64>| m.select_rows(idx.iter());
        Ok(LifeTableSeries {
            sex: self.sex,
            years: idx.iter().map(|&i| self.years[i]).collect(),
            ages: self.ages.clone(),
            qx: rows(&self.qx),
            lx: rows(&self.lx),
            dx: rows(&self.dx),
            radix: self.radix,
            ax: self.ax.as_ref().map(rows),
        })
    }

    /// Builds life tables from a forecast density panel: `d_x = radix·density`,
    /// `l_x = radix·(1 − D_{x−1})`, and `q_x = d_x / l_x` (1 where nobody survives).
    pub fn from_density_panel(sex: Sex, panel: &DensityPanel, radix: f64) -> Result<LifeTableSeries> {
        if !(radix > 0.0) {
            return Err(LifeTableError::Radix(radix));
        }
        let (n, p) = panel.d.shape();
        let mut qx = DMatrix::zeros(n, p);
        let mut lx = DMatrix::zeros(n, p);
        let mut dx = DMatrix::zeros(n, p);
        for t in 0..n {
            let mut survivors = radix;
            for x in 0..p {
                let deaths = radix * panel.d[(t, x)];
                lx[(t, x)] = survivors;
                dx[(t, x)] = deaths;
                qx[(t, x)] = if x + 1 == p || survivors <= 0.0 {
                    1.0
                } else {
                    (deaths / survivors).clamp(0.0, 1.0)
                };
                survivors = (survivors - deaths).max(0.0);
            }
        }
        Ok(LifeTableSeries {
            sex,
            years: panel.years.clone(),
            ages: panel.ages.clone(),
            qx,
            lx,
            dx,
            radix,
            ax: None,
        })
    }
}

/// Rebuilds `l_x` and `d_x` from death probabilities by the life-table recurrence
/// `d_x = l_x·q_x`, `l_{x+1} = l_x − d_x`, starting from `l_0 = radix`.
pub fn rebuild_dx_from_qx(
    sex: Sex,
    years: Vec<i32>,
    ages: Vec<u32>,
    qx: DMatrix<f64>,
    radix: f64,
) -> Result<LifeTableSeries> {
    if !(radix > 0.0) || !radix.is_finite() {
        return Err(LifeTableError::Radix(radix));
    }
    let (n, p) = qx.shape();
    if n != years.len() || p != ages.len() || p == 0 {
        return Err(LifeTableError::Shape(format!(
            "qx is {n}x{p} but {} years and {} ages were given",
            years.len(),
            ages.len()
        )));
    }
    for t in 0..n {
        for x in 0..p {
            let q = qx[(t, x)];
            if !(0.0..=1.0).contains(&q) {
                return Err(LifeTableError::QxOutOfRange {
                    year: years[t],
                    age: ages[x],
                    value: q,
                });
            }
        }
        let last = qx[(t, p - 1)];
        if last != 1.0 {
            return Err(LifeTableError::TerminalQx {
                year: years[t],
                value: last,
            });
        }
    }

    let mut lx = DMatrix::zeros(n, p);
    let mut dx = DMatrix::zeros(n, p);
    for t in 0..n {
        let mut survivors = radix;
        for x in 0..p {
            lx[(t, x)] = survivors;
            let deaths = survivors * qx[(t, x)];
            dx[(t, x)] = deaths;
            survivors -= deaths;
        }
    }
    Ok(LifeTableSeries {
        sex,
        years,
        ages,
        qx,
        lx,
        dx,
        radix,
        ax: None,
    })
}

/// Checks the recurrence and radix invariants of a life-table panel.
pub fn check_invariants(lt: &LifeTableSeries) -> Result<()> {
    let p = lt.n_ages();
    let tol = RECURRENCE_TOL * lt.radix;
    for (t, &year) in lt.years.iter().enumerate() {
        if (lt.lx[(t, 0)] - lt.radix).abs() > tol {
            return Err(LifeTableError::Shape(format!("l_0 != radix in {year}")));
        }
        for x in 0..p.saturating_sub(1) {
            let l = lt.lx[(t, x)];
            if (lt.dx[(t, x)] - l * lt.qx[(t, x)]).abs() > tol
                || (lt.lx[(t, x + 1)] - (l - lt.dx[(t, x)])).abs() > tol
                || lt.lx[(t, x + 1)] > l + tol
            {
                return Err(LifeTableError::Shape(format!(
                    "recurrence broken at year {year}, age {}",
                    lt.ages[x]
                )));
            }
        }
        let sum: f64 = lt.dx.row(t).iter().sum();
        if (sum - lt.radix).abs() > RADIX_SUM_TOL * lt.radix {
            return Err(LifeTableError::RadixMismatch {
                year,
                sum,
                radix: lt.radix,
            });
        }
    }
    Ok(())
}

/// Yearly age-at-death probability vectors; each row lies on the unit simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPanel {
    pub years: Vec<i32>,
    pub ages: Vec<u32>,
    pub d: DMatrix<f64>,
}

impl DensityPanel {
    pub fn new(years: Vec<i32>, ages: Vec<u32>, d: DMatrix<f64>) -> Result<Self> {
        if d.nrows() != years.len() || d.ncols() != ages.len() {
            return Err(LifeTableError::Shape(format!(
                "density matrix is {}x{}, grid is {}x{}",
                d.nrows(),
                d.ncols(),
                years.len(),
                ages.len()
            )));
        }
        for (t, row) in d.row_iter().enumerate() {
            validate_row(row.iter().copied(), PANEL_SUM_TOL)
                .map_err(|msg| LifeTableError::InvalidDensity(format!("year {}: {msg}", years[t])))?;
        }
        Ok(Self { years, ages, d })
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.d.row(t).iter().copied().collect()
    }
}

fn validate_row(row: impl Iterator<Item = f64>, tol: f64) -> std::result::Result<(), String> {
    let mut sum = 0.0;
    for (x, v) in row.enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(format!("entry {x} is {v}"));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > tol {
        return Err(format!("row sums to {sum}"));
    }
    Ok(())
}

/// Validates a single density row (nonnegative, unit sum within 1e-9).
pub fn validate_density(row: &[f64]) -> Result<()> {
    validate_row(row.iter().copied(), ROW_SUM_TOL).map_err(LifeTableError::InvalidDensity)
}

/// Scales death counts to probabilities, `d[t,x] = dx[t,x] / radix`.
pub fn normalize_to_density(lt: &LifeTableSeries) -> Result<DensityPanel> {
    let (n, p) = lt.dx.shape();
    let mut d = DMatrix::zeros(n, p);
    for t in 0..n {
        let sum: f64 = lt.dx.row(t).iter().sum();
        if (sum - lt.radix).abs() > RADIX_SUM_TOL * lt.radix {
            return Err(LifeTableError::RadixMismatch {
                year: lt.years[t],
                sum,
                radix: lt.radix,
            });
        }
        // Dividing by the radix leaves the row sum off by up to 1e-6; the
        // second pass closes it exactly.
        let scaled: Vec<f64> = lt.dx.row(t).iter().map(|v| v / lt.radix).collect();
        let total: f64 = scaled.iter().sum();
        for x in 0..p {
            d[(t, x)] = scaled[x] / total;
        }
    }
    DensityPanel::new(lt.years.clone(), lt.ages.clone(), d)
}

/// Period life expectancy at birth under the midpoint convention,
/// `e_0 = Σ_x d[x]·(x + 0.5)`.
pub fn life_expectancy(d: &[f64], ages: &[u32]) -> Result<f64> {
    let ax = vec![MIDPOINT_AX; ages.len()];
    life_expectancy_with_ax(d, ages, &ax)
}

/// Life expectancy with caller-supplied fractional ages at death.
pub fn life_expectancy_with_ax(d: &[f64], ages: &[u32], ax: &[f64]) -> Result<f64> {
    if d.len() != ages.len() || ax.len() != ages.len() {
        return Err(LifeTableError::Shape(format!(
            "density has {} cells, ages {}, ax {}",
            d.len(),
            ages.len(),
            ax.len()
        )));
    }
    validate_density(d)?;
    Ok(d
        .iter()
        .zip(ages)
        .zip(ax)
        .map(|((p, &age), a)| p * (age as f64 + a))
        .sum())
}

/// Standard Gini concentration of ages at death (midpoint ages, probability
/// weights): `G = Σ_i Σ_j d_i d_j |a_i − a_j| / (2μ)`.
pub fn gini_concentration(d: &[f64], ages: &[u32]) -> Result<f64> {
    if d.len() != ages.len() {
        return Err(LifeTableError::Shape(format!(
            "density has {} cells, ages {}",
            d.len(),
            ages.len()
        )));
    }
    validate_density(d)?;
    let mut atoms: Vec<(f64, f64)> = ages
        .iter()
        .zip(d)
        .map(|(&a, &w)| (a as f64 + MIDPOINT_AX, w))
        .collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    let mean: f64 = atoms.iter().map(|(a, w)| a * w).sum::<f64>() / total;

    // Σ_i Σ_j w_i w_j |a_i − a_j| = 2 Σ_i w_i a_i (below_i − above_i)
    let mut below = 0.0;
    let mut acc = 0.0;
    let mut i = 0;
    while i < atoms.len() {
        // atoms sharing an age contribute nothing to each other
        let mut j = i;
        let mut group = 0.0;
        while j < atoms.len() && atoms[j].0 == atoms[i].0 {
            group += atoms[j].1;
            j += 1;
        }
        let above = total - below - group;
        acc += group * atoms[i].0 * (below - above);
        below += group;
        i = j;
    }
    let g = acc / (total * total * mean);
    Ok(g.clamp(0.0, 1.0))
}

/// Equality-oriented Gini index, `1 − G`: equals 1 when every death occurs at
/// the same age.
pub fn gini_equality_index(d: &[f64], ages: &[u32]) -> Result<f64> {
    Ok(1.0 - gini_concentration(d, ages)?)
}

/// Age with the largest density (first one on ties).
pub fn modal_age(d: &[f64], ages: &[u32]) -> u32 {
    let mut best = 0;
    for (i, v) in d.iter().enumerate() {
        if *v > d[best] {
            best = i;
        }
    }
    ages[best]
}

fn parse_age(token: &str) -> Option<u32> {
    token.trim_end_matches('+').parse().ok()
}

/// Parses an HMD/JMD period life-table text file. Only `Year`, `Age`, `qx`
/// (and `ax`, when present) are consumed; `lx`/`dx` are rebuilt from `qx`.
///
/// Lines before the `Year ... Age ...` header are ignored, which accepts both
/// the bare single-header layout and the HMD two-line preamble.
pub fn parse_hmd(text: &str, sex: Sex, radix: f64, source: &str) -> Result<LifeTableSeries> {
    let perr = |line: usize, msg: String| LifeTableError::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) => {
                let toks: Vec<&str> = l.split_whitespace().collect();
                if toks.first() == Some(&"Year") {
                    break toks;
                }
            }
            None => return Err(perr(0, "no header line starting with 'Year'".into())),
        }
    };
    let col = |name: &str| header.iter().position(|h| *h == name);
    let (c_year, c_age, c_qx) = match (col("Year"), col("Age"), col("qx")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(perr(1, "header must contain Year, Age and qx".into())),
    };
    let c_ax = col("ax");

    let mut rows: Vec<(i32, u32, f64, Option<f64>)> = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() < header.len() {
            return Err(perr(lineno, format!("expected {} columns, found {}", header.len(), toks.len())));
        }
        let year: i32 = toks[c_year]
            .parse()
            .map_err(|_| perr(lineno, format!("bad year '{}'", toks[c_year])))?;
        let age = parse_age(toks[c_age]).ok_or_else(|| perr(lineno, format!("bad age '{}'", toks[c_age])))?;
        let q_tok = toks[c_qx];
        if q_tok == "." {
            return Err(perr(lineno, "missing qx".into()));
        }
        let q: f64 = q_tok
            .parse()
            .map_err(|_| perr(lineno, format!("bad qx '{q_tok}'")))?;
        let ax = c_ax.and_then(|c| toks[c].parse::<f64>().ok());
        rows.push((year, age, q, ax));
    }
    if rows.is_empty() {
        return Err(perr(0, "no data rows".into()));
    }

    let mut years: Vec<i32> = rows.iter().map(|r| r.0).collect();
    years.sort_unstable();
    years.dedup();
    let mut ages: Vec<u32> = rows.iter().map(|r| r.1).collect();
    ages.sort_unstable();
    ages.dedup();
    let (n, p) = (years.len(), ages.len());
    let mut qx = DMatrix::from_element(n, p, f64::NAN);
    let mut ax = DMatrix::from_element(n, p, f64::NAN);
    let mut have_ax = c_ax.is_some();
    for &(y, a, q, a_x) in &rows {
        let t = years.binary_search(&y).unwrap();
        let x = ages.binary_search(&a).unwrap();
        qx[(t, x)] = q;
        match a_x {
            Some(v) => ax[(t, x)] = v,
            None => have_ax = false,
        }
    }
    if let Some((idx, _)) = qx.iter().enumerate().find(|(_, v)| v.is_nan()) {
        // column-major index
        let (t, x) = (idx % n, idx / n);
        return Err(perr(0, format!("missing row for year {}, age {}", years[t], ages[x])));
    }
    let mut lt = rebuild_dx_from_qx(sex, years, ages, qx, radix)?;
    if have_ax {
        lt.ax = Some(ax);
    }
    Ok(lt)
}

pub fn read_hmd(path: &Path, sex: Sex, radix: f64) -> Result<LifeTableSeries> {
    let text = std::fs::read_to_string(path).map_err(|e| LifeTableError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_hmd(&text, sex, radix, &path.display().to_string())
}

/// Writes a year-by-age panel as CSV with header `year,age,value`.
pub fn panel_to_csv(years: &[i32], ages: &[u32], values: &DMatrix<f64>) -> String {
    let mut out = String::from("year,age,value\n");
    for (t, y) in years.iter().enumerate() {
        for (x, a) in ages.iter().enumerate() {
            out.push_str(&format!("{y},{a},{}\n", values[(t, x)]));
        }
    }
    out
}

/// Reads the `year,age,value` CSV layout back into a dense panel.
pub fn panel_from_csv(text: &str) -> Result<(Vec<i32>, Vec<u32>, DMatrix<f64>)> {
    let perr = |line: usize, msg: String| LifeTableError::Parse {
        path: "<csv>".into(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "year,age,value")) => {}
        _ => return Err(perr(1, "expected header 'year,age,value'".into())),
    }
    let mut cells = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(perr(i + 1, "expected 3 fields".into()));
        }
        let y: i32 = f[0].parse().map_err(|_| perr(i + 1, "bad year".into()))?;
        let a: u32 = f[1].parse().map_err(|_| perr(i + 1, "bad age".into()))?;
        let v: f64 = f[2].parse().map_err(|_| perr(i + 1, "bad value".into()))?;
        cells.push((y, a, v));
    }
    let mut years: Vec<i32> = cells.iter().map(|c| c.0).collect();
    years.sort_unstable();
    years.dedup();
    let mut ages: Vec<u32> = cells.iter().map(|c| c.1).collect();
    ages.sort_unstable();
    ages.dedup();
    if cells.len() != years.len() * ages.len() {
        return Err(perr(0, "panel is not a full year-by-age grid".into()));
    }
    let mut m = DMatrix::zeros(years.len(), ages.len());
    for (y, a, v) in cells {
        m[(years.binary_search(&y).unwrap(), ages.binary_search(&a).unwrap())] = v;
    }
    Ok((years, ages, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_year(q: &[f64], radix: f64) -> LifeTableSeries {
        let ages = (0..q.len() as u32).collect();
        rebuild_dx_from_qx(Sex::Female, vec![2000], ages, DMatrix::from_row_slice(1, q.len(), q), radix).unwrap()
    }

    fn pairwise_gini(d: &[f64], ages: &[u32]) -> f64 {
        let a: Vec<f64> = ages.iter().map(|&x| x as f64 + 0.5).collect();
        let mu: f64 = d.iter().zip(&a).map(|(p, x)| p * x).sum();
        let mut s = 0.0;
        for i in 0..d.len() {
            for j in 0..d.len() {
                s += d[i] * d[j] * (a[i] - a[j]).abs();
            }
        }
        s / (2.0 * mu)
    }

    #[test]
    fn single_age_table() {
        let lt = one_year(&[1.0], 100_000.0);
        assert_eq!(lt.dx[(0, 0)], 100_000.0);
        assert_eq!(lt.lx[(0, 0)], 100_000.0);
    }

    #[test]
    fn halving_cascade() {
        let lt = one_year(&[0.5, 0.5, 1.0], 8.0);
        assert_eq!(lt.dx.row(0).iter().copied().collect::<Vec<_>>(), vec![4.0, 2.0, 2.0]);
        assert_eq!(lt.lx.row(0).iter().copied().collect::<Vec<_>>(), vec![8.0, 4.0, 2.0]);
    }

    #[test]
    fn four_age_table() {
        let lt = one_year(&[0.1, 0.2, 0.3, 1.0], 1e5);
        // sequential l·q by hand
        let mut l = 1e5;
        let mut expect = vec![];
        for q in [0.1, 0.2, 0.3, 1.0] {
            expect.push(l * q);
            l -= l * q;
        }
        for (x, want) in [10000.0, 18000.0, 21600.0, 50400.0].iter().enumerate() {
            assert!((lt.dx[(0, x)] - want).abs() < 1e-9);
            assert!((lt.dx[(0, x)] - expect[x]).abs() < 1e-12);
        }
        check_invariants(&lt).unwrap();
        let dens = normalize_to_density(&lt).unwrap();
        for (x, want) in [0.10, 0.18, 0.216, 0.504].iter().enumerate() {
            assert!((dens.d[(0, x)] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_qx() {
        let ages = vec![0, 1];
        let bad = rebuild_dx_from_qx(Sex::Male, vec![1], ages.clone(), DMatrix::from_row_slice(1, 2, &[1.2, 1.0]), 1.0);
        assert!(matches!(bad, Err(LifeTableError::QxOutOfRange { .. })));
        let bad = rebuild_dx_from_qx(Sex::Male, vec![1], ages, DMatrix::from_row_slice(1, 2, &[0.2, 0.9]), 1.0);
        assert!(matches!(bad, Err(LifeTableError::TerminalQx { .. })));
    }

    #[test]
    fn normalize_examples() {
        let mk = |row: &[f64]| LifeTableSeries {
            sex: Sex::Female,
            years: vec![1],
            ages: vec![0, 1, 2],
            qx: DMatrix::zeros(1, 3),
            lx: DMatrix::zeros(1, 3),
            dx: DMatrix::from_row_slice(1, 3, row),
            radix: 1e5,
            ax: None,
        };
        let d = normalize_to_density(&mk(&[100000.0, 0.0, 0.0])).unwrap();
        assert_eq!(d.row(0), vec![1.0, 0.0, 0.0]);
        let d = normalize_to_density(&mk(&[25000.0, 25000.0, 50000.0])).unwrap();
        assert_eq!(d.row(0), vec![0.25, 0.25, 0.5]);
        assert!(matches!(
            normalize_to_density(&mk(&[25000.0, 25000.0, 40000.0])),
            Err(LifeTableError::RadixMismatch { .. })
        ));
    }

    #[test]
    fn life_expectancy_examples() {
        assert_eq!(life_expectancy(&[1.0, 0.0, 0.0], &[0, 1, 2]).unwrap(), 0.5);
        assert_eq!(life_expectancy(&[0.0, 0.0, 1.0], &[0, 1, 2]).unwrap(), 2.5);
        let direct = 0.5 * 0.5 + 0.5 * 1.5;
        assert_eq!(life_expectancy(&[0.5, 0.5], &[0, 1]).unwrap(), direct);
        assert!(life_expectancy(&[0.5, 0.6], &[0, 1]).is_err());
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini_equality_index(&[0.0, 1.0, 0.0], &[0, 1, 2]).unwrap(), 1.0);
        let d = [0.5, 0.5];
        assert!((pairwise_gini(&d, &[0, 1]) - 0.25).abs() < 1e-15);
        assert!((gini_equality_index(&d, &[0, 1]).unwrap() - 0.75).abs() < 1e-15);

        // uniform over ages 0..9, pinned from the pairwise oracle: G = 0.33, index = 0.67
        let ages: Vec<u32> = (0..10).collect();
        let u = vec![0.1; 10];
        let oracle = pairwise_gini(&u, &ages);
        assert!((oracle - 0.33).abs() < 1e-12);
        assert!((gini_equality_index(&u, &ages).unwrap() - 0.67).abs() < 1e-12);
    }

    #[test]
    fn gini_mean_preserving_spread_lowers_index() {
        let ages: Vec<u32> = (0..5).collect();
        let tight = [0.0, 0.25, 0.5, 0.25, 0.0];
        let spread = [0.1, 0.2, 0.4, 0.2, 0.1];
        assert!(gini_equality_index(&spread, &ages).unwrap() < gini_equality_index(&tight, &ages).unwrap());
    }

    #[test]
    fn parses_hmd_layout() {
        let text = "Japan, Life tables (period 1x1), Females\n\
                    \n  Year  Age  mx  qx  ax  lx  dx  Lx  Tx  ex\n\
                    2000 0 0.01 0.25 0.1 100000 . . . .\n\
                    2000 1 0.01 0.5 0.5 . . . . .\n\
                    2000 2+ . 1.0 0.5 . . . . .\n\
                    2001 0 0.01 0.2 0.1 . . . . .\n\
                    2001 1 0.01 0.5 0.5 . . . . .\n\
                    2001 2+ . 1.0 0.5 . . . . .\n";
        let lt = parse_hmd(text, Sex::Female, 100.0, "mem").unwrap();
        assert_eq!(lt.years, vec![2000, 2001]);
        assert_eq!(lt.ages, vec![0, 1, 2]);
        assert_eq!(lt.dx.row(0).iter().copied().collect::<Vec<_>>(), vec![25.0, 37.5, 37.5]);
        assert_eq!(lt.ax.as_ref().unwrap()[(1, 0)], 0.1);

        let missing = text.replace("2001 1 0.01 0.5", "2001 1 0.01 .");
        let err = parse_hmd(&missing, Sex::Female, 100.0, "mem").unwrap_err();
        assert!(matches!(err, LifeTableError::Parse { line: 8, .. }), "{err}");
    }

    #[test]
    fn csv_round_trip() {
        let m = DMatrix::from_row_slice(2, 2, &[0.1, 0.9, 1.0 / 3.0, 2.0 / 3.0]);
        let csv = panel_to_csv(&[1, 2], &[0, 110], &m);
        let (y, a, back) = panel_from_csv(&csv).unwrap();
        assert_eq!(y, vec![1, 2]);
        assert_eq!(a, vec![0, 110]);
        assert_eq!(back, m);
    }
}
