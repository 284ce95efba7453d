//! Cohort survival probabilities and temporary immediate annuity prices.
//!
//! Forecast period tables are read along the cohort diagonal: a person aged `x`
//! at the anchor year survives its `j`-th year with probability
//! `1 − d_{x+j−1} / l_{x+j−1}` taken from the table `j` years after the anchor.
//! The price of an annuity paying 1 per year for at most `T` years is
//! `a_x^T = Σ_{τ=1..T} exp(−ητ) · τp_x`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lifetable::{DensityPanel, LifeTableError, LifeTableSeries, Sex};
use crate::pipeline::ForecastResult;

pub const GRID_AGES: [u32; 10] = [60, 65, 70, 75, 80, 85, 90, 95, 100, 105];
pub const GRID_MATURITIES: [usize; 6] = [5, 10, 15, 20, 25, 30];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnuityError {
    #[error("age {age} needs {needed} forecast years, only {available} available")]
    HorizonExceeded { age: u32, needed: usize, available: usize },
    #[error("age {age} + maturity {maturity} exceeds the maximum age {max_age}")]
    ContractBound { age: u32, maturity: usize, max_age: u32 },
    #[error("interest rate must be non-negative, got {0}")]
    NegativeRate(f64),
    #[error("age {0} is not in the forecast tables")]
    UnknownAge(u32),
    #[error(transparent)]
    LifeTable(#[from] LifeTableError),
    #[error("pricing file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, AnnuityError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricingConfig {
    /// Continuously compounded annual interest rate.
    pub eta: f64,
    pub max_age: u32,
}

impl PricingConfig {
    pub fn new(eta: f64) -> Result<Self> {
        if !(eta >= 0.0) {
            return Err(AnnuityError::NegativeRate(eta));
        }
        Ok(PricingConfig { eta, max_age: 110 })
    }
}

/// `p[τ] = τp_x` for `τ = 0..=tau_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSurvival {
    pub x: u32,
    pub tau_max: usize,
    pub p: Vec<f64>,
}

/// Converts forecast densities into period life tables with the given radix.
pub fn forecast_tables(result: &ForecastResult, radix: f64) -> Result<LifeTableSeries> {
    let panel = DensityPanel::new(result.years.clone(), result.ages.clone(), result.point.clone())?;
    Ok(LifeTableSeries::from_density_panel(result.sex, &panel, radix)?)
}

/// Survival along the cohort diagonal of `tables`, whose first year is the
/// first year after the anchor.
pub fn cohort_survival(tables: &LifeTableSeries, x: u32, tau_max: usize) -> Result<CohortSurvival> {
    let start = tables.ages.iter().position(|&a| a == x).ok_or(AnnuityError::UnknownAge(x))?;
    let available = tables.n_years().min(tables.n_ages() - start);
    if tau_max > available {
        return Err(AnnuityError::HorizonExceeded {
            age: x,
            needed: tau_max,
            available,
        });
    }
    let mut p = Vec::with_capacity(tau_max + 1);
    p.push(1.0);
    let mut log_p = 0.0f64;
    for j in 1..=tau_max {
        let (t, a) = (j - 1, start + j - 1);
        let l = tables.lx[(t, a)];
        let q = if l > 0.0 { (tables.dx[(t, a)] / l).clamp(0.0, 1.0) } else { 1.0 };
        log_p += (-q).ln_1p();
        p.push(log_p.exp());
    }
    Ok(CohortSurvival { x, tau_max, p })
}

/// Zero-coupon bond price `B(0, τ) = exp(−ητ)`.
pub fn bond_price(eta: f64, tau: f64) -> f64 {
    (-eta * tau).exp()
}

pub fn annuity_price(survival: &CohortSurvival, cfg: &PricingConfig, maturity: usize) -> Result<f64> {
    if survival.x as usize + maturity > cfg.max_age as usize {
        return Err(AnnuityError::ContractBound {
            age: survival.x,
            maturity,
            max_age: cfg.max_age,
        });
    }
    if maturity > survival.tau_max {
        return Err(AnnuityError::HorizonExceeded {
            age: survival.x,
            needed: maturity,
            available: survival.tau_max,
        });
    }
    Ok((1..=maturity)
        .map(|tau| bond_price(cfg.eta, tau as f64) * survival.p[tau])
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceCell {
    pub sex: Sex,
    pub age: u32,
    pub maturity: usize,
    pub eta: f64,
    /// `None` where the contract would run past the maximum age.
    pub price: Option<f64>,
}

/// Prices every (age, maturity) cell of the standard grid for each rate.
pub fn price_grid(tables: &LifeTableSeries, etas: &[f64]) -> Result<Vec<PriceCell>> {
    let mut cells = Vec::new();
    for &eta in etas {
        let cfg = PricingConfig::new(eta)?;
        let rows: Vec<Vec<PriceCell>> = GRID_AGES
            .par_iter()
            .map(|&age| {
                let longest = GRID_MATURITIES
                    .iter()
                    .copied()
                    .filter(|&m| age as usize + m <= cfg.max_age as usize)
                    .max()
                    .unwrap_or(0);
                let survival = cohort_survival(tables, age, longest)?;
                GRID_MATURITIES
                    .iter()
                    .map(|&maturity| {
                        let price = match annuity_price(&survival, &cfg, maturity) {
                            Ok(v) => Some(v),
                            Err(AnnuityError::ContractBound { .. }) => None,
                            Err(e) => return Err(e),
                        };
                        Ok(PriceCell { sex: tables.sex, age, maturity, eta, price })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        cells.extend(rows.into_iter().flatten());
    }
    Ok(cells)
}

const CSV_HEADER: &str = "sex,age,maturity,eta,price";

pub fn grid_to_csv(cells: &[PriceCell]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for c in cells {
        let price = c.price.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{}", c.sex, c.age, c.maturity, c.eta, price);
    }
    out
}

pub fn grid_from_csv(text: &str) -> Result<Vec<PriceCell>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(AnnuityError::Parse { line: 1, msg: format!("expected header '{CSV_HEADER}'") }),
    }
    let mut cells = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| AnnuityError::Parse { line: i + 1, msg };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", f.len())));
        }
        cells.push(PriceCell {
            sex: f[0].parse::<Sex>().map_err(|e| err(e.to_string()))?,
            age: f[1].parse().map_err(|e| err(format!("age '{}': {e}", f[1])))?,
            maturity: f[2].parse().map_err(|e| err(format!("maturity '{}': {e}", f[2])))?,
            eta: f[3].parse().map_err(|e| err(format!("eta '{}': {e}", f[3])))?,
            price: if f[4].is_empty() {
                None
            } else {
                Some(f[4].parse().map_err(|e| err(format!("price '{}': {e}", f[4])))?)
            },
        });
    }
    Ok(cells)
}

/// Age-by-maturity tables, one block per (sex, rate), blank where the
/// contract is not offered.
pub fn render_grid(cells: &[PriceCell]) -> String {
    let mut blocks: Vec<(Sex, f64)> = Vec::new();
    for c in cells {
        if !blocks.iter().any(|&(s, e)| s == c.sex && e == c.eta) {
            blocks.push((c.sex, c.eta));
        }
    }
    let mut out = String::new();
    for (sex, eta) in blocks {
        let _ = writeln!(out, "Annuity prices, sex {sex}, eta = {eta}");
        let mut header = format!("{:>6}", "Age");
        for m in GRID_MATURITIES {
            header.push_str(&format!("{:>10}", format!("T={m}")));
        }
        let _ = writeln!(out, "{header}");
        for age in GRID_AGES {
            let mut line = format!("{age:>6}");
            for m in GRID_MATURITIES {
                let cell = cells
                    .iter()
                    .find(|c| c.sex == sex && c.eta == eta && c.age == age && c.maturity == m)
                    .and_then(|c| c.price);
                let text = cell.map(|v| format!("{v:.3}")).unwrap_or_default();
                line.push_str(&format!("{text:>10}"));
            }
            let _ = writeln!(out, "{line}");
        }
        out.push('\n');
    }
    out
}
