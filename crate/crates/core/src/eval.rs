//! Expanding-window out-of-sample evaluation and accuracy metrics.
//!
//! Each window trains on `train_start ..= train_end` and forecasts the
//! remaining years up to the last observed year. Metrics at horizon `h` pool
//! every `h`-step forecast and every age, so their denominators are
//! `p · count(h)` where `count(h) = T − h + 1` for a test span of `T` years.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fpca::ComponentSelector;
use crate::lifetable::{life_expectancy, normalize_to_density, DensityPanel, LifeTableError, LifeTableSeries, Sex};
use crate::pipeline::{forecast, Method, PipelineConfig, PipelineError};

/// Densities are clipped below at this value before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("window ending {train_end}, method {method}: {source}")]
    Window {
        train_end: i32,
        method: Method,
        #[source]
        source: PipelineError,
    },
    #[error("invalid window plan: {0}")]
    Plan(String),
    #[error(transparent)]
    LifeTable(#[from] LifeTableError),
    #[error("metrics file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub train_start: i32,
    pub first_test_year: i32,
    pub last_year: i32,
    pub max_horizon: usize,
}

impl WindowPlan {
    pub fn new(train_start: i32, first_test_year: i32, last_year: i32, max_horizon: usize) -> Result<Self> {
        if first_test_year <= train_start {
            return Err(EvalError::Plan(format!(
                "first test year {first_test_year} must follow training start {train_start}"
            )));
        }
        if last_year < first_test_year {
            return Err(EvalError::Plan(format!(
                "last year {last_year} precedes first test year {first_test_year}"
            )));
        }
        if max_horizon == 0 {
            return Err(EvalError::Plan("maximum horizon must be at least 1".into()));
        }
        Ok(WindowPlan {
            train_start,
            first_test_year,
            last_year,
            max_horizon,
        })
    }

    /// Number of test years, which is also the number of windows.
    pub fn n_windows(&self) -> usize {
        (self.last_year - self.first_test_year + 1) as usize
    }

    pub fn horizons(&self) -> usize {
        self.max_horizon.min(self.n_windows())
    }

    /// Last training year of each window, in chronological order.
    pub fn train_ends(&self) -> Vec<i32> {
        (self.first_test_year - 1..self.last_year).collect()
    }

    /// Number of `h`-step-ahead forecasts produced over all windows.
    pub fn count(&self, h: usize) -> usize {
        if h == 0 || h > self.horizons() {
            0
        } else {
            self.n_windows() - h + 1
        }
    }

    fn window_horizon(&self, train_end: i32) -> usize {
        ((self.last_year - train_end) as usize).min(self.max_horizon)
    }
}

/// Symmetric Kullback–Leibler divergence between two discrete densities.
pub fn kld(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let (a, b) = (a.max(LOG_FLOOR), b.max(LOG_FLOOR));
            let r = a.ln() - b.ln();
            a * r - b * r
        })
        .sum()
}

/// One-sided divergence `D_KL(p‖q)`, with the same clipping.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let (a, b) = (a.max(LOG_FLOOR), b.max(LOG_FLOOR));
            a * (a.ln() - b.ln())
        })
        .sum()
}

/// Jensen–Shannon divergence with the (unnormalised) geometric-mean reference
/// `δ_x = √(p_x q_x)`.
pub fn jsd_geometric(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let (a, b) = (a.max(LOG_FLOOR), b.max(LOG_FLOOR));
            let (la, lb) = (a.ln(), b.ln());
            let ld = 0.5 * (la + lb);
            0.5 * a * (la - ld) + 0.5 * b * (lb - ld)
        })
        .sum()
}

pub fn interval_score(lower: f64, upper: f64, actual: f64, alpha: f64) -> f64 {
    let mut s = upper - lower;
    if actual < lower {
        s += 2.0 / alpha * (lower - actual);
    }
    if actual > upper {
        s += 2.0 / alpha * (actual - upper);
    }
    s
}

/// Empirical coverage of `[lower, upper]` and its absolute deviation from the
/// nominal `1 − alpha`.
pub fn ecp_cpd(lower: &[f64], upper: &[f64], actual: &[f64], alpha: f64) -> (f64, f64) {
    let inside = lower
        .iter()
        .zip(upper)
        .zip(actual)
        .filter(|((l, u), a)| *l <= *a && *a <= *u)
        .count();
    let ecp = inside as f64 / actual.len() as f64;
    (ecp, (ecp - (1.0 - alpha)).abs())
}

/// RMSFE and MAFE of life expectancy at birth over paired density rows.
pub fn e0_errors(forecasts: &[Vec<f64>], actuals: &[Vec<f64>], ages: &[u32]) -> Result<(f64, f64)> {
    let mut errs = Vec::with_capacity(forecasts.len());
    for (f, a) in forecasts.iter().zip(actuals) {
        errs.push(life_expectancy(f, ages)? - life_expectancy(a, ages)?);
    }
    Ok(rmse_mae(&errs))
}

fn rmse_mae(errs: &[f64]) -> (f64, f64) {
    let n = errs.len() as f64;
    let mse = errs.iter().map(|e| e * e).sum::<f64>() / n;
    let mae = errs.iter().map(|e| e.abs()).sum::<f64>() / n;
    (mse.sqrt(), mae)
}

/// A forecasting method paired with its component selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub method: Method,
    pub selector: ComponentSelector,
}

impl Variant {
    pub fn label(&self) -> String {
        format!("{} ({})", self.method, self.selector.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: Method,
    pub sex: Sex,
    pub selector: String,
    pub h: usize,
    pub kld: f64,
    pub jsd: f64,
    pub score: f64,
    pub ecp: f64,
    pub cpd: f64,
    pub rmsfe_e0: f64,
    pub mafe_e0: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub alpha: f64,
    pub rows: Vec<MetricRow>,
}

const CSV_HEADER: &str = "method,sex,selector,h,kld,jsd,score,ecp,cpd,rmsfe_e0,mafe_e0";

impl MetricReport {
    pub fn rows_for(&self, method: Method, sex: Sex, selector: &str) -> Vec<&MetricRow> {
        self.rows
            .iter()
            .filter(|r| r.method == method && r.sex == sex && r.selector == selector)
            .collect()
    }

    /// Average of a metric over horizons, as in the "Mean" row of the tables.
    pub fn mean_over_horizons(&self, method: Method, sex: Sex, selector: &str, metric: fn(&MetricRow) -> f64) -> Option<f64> {
        let rows = self.rows_for(method, sex, selector);
        if rows.is_empty() {
            return None;
        }
        Some(rows.iter().map(|r| metric(r)).sum::<f64>() / rows.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.method, r.sex, r.selector, r.h, r.kld, r.jsd, r.score, r.ecp, r.cpd, r.rmsfe_e0, r.mafe_e0
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Vec<MetricRow>> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            _ => return Err(EvalError::Parse { line: 1, msg: format!("expected header '{CSV_HEADER}'") }),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| EvalError::Parse { line: i + 1, msg };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                return Err(err(format!("expected 11 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("'{s}': {e}")));
            rows.push(MetricRow {
                method: f[0].parse().map_err(err)?,
                sex: f[1].parse::<Sex>().map_err(|e| err(e.to_string()))?,
                selector: f[2].to_string(),
                h: f[3].parse().map_err(|e| err(format!("'{}': {e}", f[3])))?,
                kld: num(f[4])?,
                jsd: num(f[5])?,
                score: num(f[6])?,
                ecp: num(f[7])?,
                cpd: num(f[8])?,
                rmsfe_e0: num(f[9])?,
                mafe_e0: num(f[10])?,
            });
        }
        Ok(rows)
    }

    /// Plain-text comparison tables: point errors (KLD, JSD ×100), life
    /// expectancy errors and interval errors. Per horizon and metric, the best
    /// value across variants is starred.
    pub fn render_tables(&self) -> String {
        let mut columns: Vec<(Method, String)> = Vec::new();
        let mut sexes: Vec<Sex> = Vec::new();
        for r in &self.rows {
            if !columns.iter().any(|(m, s)| *m == r.method && *s == r.selector) {
                columns.push((r.method, r.selector.clone()));
            }
            if !sexes.contains(&r.sex) {
                sexes.push(r.sex);
            }
        }
        type Metric = (&'static str, fn(&MetricRow) -> f64, f64);
        let blocks: [(&str, [Metric; 2]); 3] = [
            ("Point forecast errors (x100)", [("KLD", |r| r.kld, 100.0), ("JSD", |r| r.jsd, 100.0)]),
            ("Life expectancy errors", [("RMSFE", |r| r.rmsfe_e0, 1.0), ("MAFE", |r| r.mafe_e0, 1.0)]),
            (
                "Interval forecast errors",
                [("score", |r| r.score, 1.0), ("CPD", |r| r.cpd, 1.0)],
            ),
        ];
        let mut out = String::new();
        for (title, metrics) in blocks {
            let _ = writeln!(out, "{title}, nominal coverage {}", 1.0 - self.alpha);
            let mut header = format!("{:<7}{:>5}", "Sex", "h");
            let mut sub = format!("{:<7}{:>5}", "", "");
            for (m, s) in &columns {
                header.push_str(&format!("{:>24}", format!("{m} ({s})")));
                for (name, _, _) in &metrics {
                    sub.push_str(&format!("{name:>12}"));
                }
            }
            let _ = writeln!(out, "{header}\n{sub}");
            for &sex in &sexes {
                let horizons: Vec<usize> = {
                    let mut hs: Vec<usize> = self.rows.iter().filter(|r| r.sex == sex).map(|r| r.h).collect();
                    hs.sort_unstable();
                    hs.dedup();
                    hs
                };
                let mut table: Vec<(String, Vec<Option<[f64; 2]>>)> = Vec::new();
                for &h in &horizons {
                    let cells = columns
                        .iter()
                        .map(|(m, s)| {
                            self.rows
                                .iter()
                                .find(|r| r.method == *m && r.sex == sex && r.selector == *s && r.h == h)
                                .map(|r| [metrics[0].1(r) * metrics[0].2, metrics[1].1(r) * metrics[1].2])
                        })
                        .collect();
                    table.push((h.to_string(), cells));
                }
                let means = columns
                    .iter()
                    .map(|(m, s)| {
                        let rows = self.rows_for(*m, sex, s);
                        if rows.is_empty() {
                            return None;
                        }
                        let n = rows.len() as f64;
                        Some([0, 1].map(|i| rows.iter().map(|r| metrics[i].1(r) * metrics[i].2).sum::<f64>() / n))
                    })
                    .collect();
                table.push(("Mean".to_string(), means));
                for (i, (label, cells)) in table.iter().enumerate() {
                    let sex_label = if i == 0 { sex.as_str() } else { "" };
                    let mut line = format!("{:<7}{:>5}", sex_label, label);
                    let best = [0, 1].map(|k| {
                        cells
                            .iter()
                            .flatten()
                            .map(|c| c[k])
                            .fold(f64::INFINITY, f64::min)
                    });
                    for cell in cells {
                        for k in 0..2 {
                            let text = match cell {
                                Some(c) => {
                                    let star = if c[k] == best[k] && cells.len() > 1 { "*" } else { "" };
                                    format!("{:.4}{star}", c[k])
                                }
                                None => "-".to_string(),
                            };
                            line.push_str(&format!("{text:>12}"));
                        }
                    }
                    let _ = writeln!(out, "{line}");
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
struct Cell {
    kld: f64,
    jsd: f64,
    score: f64,
    covered: usize,
    points: usize,
    e0_errors: Vec<f64>,
}

type CellKey = (usize, Sex, usize);

struct WindowOutcome {
    train_end: i32,
    cells: BTreeMap<CellKey, Cell>,
}

fn actual_densities(data: &[LifeTableSeries]) -> Result<Vec<DensityPanel>> {
    Ok(data.iter().map(normalize_to_density).collect::<std::result::Result<_, _>>()?)
}

fn run_window(
    data: &[LifeTableSeries],
    actuals: &[DensityPanel],
    variants: &[Variant],
    plan: &WindowPlan,
    base: &PipelineConfig,
    train_end: i32,
) -> Result<WindowOutcome> {
    let horizon = plan.window_horizon(train_end);
    let training: Vec<LifeTableSeries> = data
        .iter()
        .map(|lt| lt.slice_years(plan.train_start, train_end))
        .collect::<std::result::Result<_, _>>()?;
    let mut cells = BTreeMap::new();
    for (vi, variant) in variants.iter().enumerate() {
        let cfg = PipelineConfig {
            selector: variant.selector,
            horizon,
            ..base.clone()
        };
        let run = forecast(variant.method, &training, &cfg).map_err(|source| EvalError::Window {
            train_end,
            method: variant.method,
            source,
        })?;
        for res in &run.results {
            let (si, panel) = data
                .iter()
                .zip(actuals)
                .find(|(lt, _)| lt.sex == res.sex)
                .map(|(lt, p)| (lt.sex, p))
                .expect("forecast sexes come from the input");
            for h in 1..=horizon {
                let year = train_end + h as i32;
                let t = panel
                    .years
                    .iter()
                    .position(|&y| y == year)
                    .ok_or_else(|| EvalError::Plan(format!("no observations for {year}")))?;
                let actual = panel.row(t);
                let point = res.point_row(h);
                let lower: Vec<f64> = res.lower.row(h - 1).iter().copied().collect();
                let upper: Vec<f64> = res.upper.row(h - 1).iter().copied().collect();
                let cell: &mut Cell = cells.entry((vi, si, h)).or_default();
                cell.kld += kld(&actual, &point);
                cell.jsd += jsd_geometric(&actual, &point);
                for x in 0..actual.len() {
                    cell.score += interval_score(lower[x], upper[x], actual[x], base.alpha);
                    if lower[x] <= actual[x] && actual[x] <= upper[x] {
                        cell.covered += 1;
                    }
                }
                cell.points += actual.len();
                cell.e0_errors
                    .push(life_expectancy(&point, &panel.ages)? - life_expectancy(&actual, &panel.ages)?);
            }
        }
    }
    Ok(WindowOutcome { train_end, cells })
}

fn check_plan(data: &[LifeTableSeries], plan: &WindowPlan) -> Result<()> {
    for lt in data {
        let (first, last) = (lt.years[0], *lt.years.last().unwrap());
        if plan.train_start < first || plan.last_year > last {
            return Err(EvalError::Plan(format!(
                "{} data cover {first}-{last}, plan needs {}-{}",
                lt.sex, plan.train_start, plan.last_year
            )));
        }
    }
    Ok(())
}

fn evaluate_windows(
    data: &[LifeTableSeries],
    variants: &[Variant],
    plan: &WindowPlan,
    base: &PipelineConfig,
    order: &[i32],
) -> Result<MetricReport> {
    check_plan(data, plan)?;
    let actuals = actual_densities(data)?;
    let mut outcomes: Vec<WindowOutcome> = order
        .par_iter()
        .map(|&end| run_window(data, &actuals, variants, plan, base, end))
        .collect::<Result<_>>()?;
    outcomes.sort_by_key(|o| o.train_end);

    let mut pooled: BTreeMap<CellKey, Cell> = BTreeMap::new();
    for outcome in outcomes {
        for (key, c) in outcome.cells {
            let acc = pooled.entry(key).or_default();
            acc.kld += c.kld;
            acc.jsd += c.jsd;
            acc.score += c.score;
            acc.covered += c.covered;
            acc.points += c.points;
            acc.e0_errors.extend(c.e0_errors);
        }
    }
    let rows = pooled
        .into_iter()
        .map(|((vi, sex, h), c)| {
            let n = c.points as f64;
            let ecp = c.covered as f64 / n;
            let (rmsfe, mafe) = rmse_mae(&c.e0_errors);
            MetricRow {
                method: variants[vi].method,
                sex,
                selector: variants[vi].selector.label(),
                h,
                kld: c.kld / n,
                jsd: c.jsd / n,
                score: c.score / n,
                ecp,
                cpd: (ecp - (1.0 - base.alpha)).abs(),
                rmsfe_e0: rmsfe,
                mafe_e0: mafe,
            }
        })
        .collect();
    Ok(MetricReport { alpha: base.alpha, rows })
}

/// Refits every variant on each expanding window and pools the accuracy
/// metrics per (variant, sex, horizon). The `selector` and `horizon` fields of
/// `base` are overridden per variant and window.
pub fn run_expanding_window(
    data: &[LifeTableSeries],
    variants: &[Variant],
    plan: &WindowPlan,
    base: &PipelineConfig,
) -> Result<MetricReport> {
    evaluate_windows(data, variants, plan, base, &plan.train_ends())
}
