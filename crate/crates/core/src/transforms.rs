//! Maps between the probability simplex and unconstrained curves: the
//! cumulative-sum + logit transform and the centred log-ratio transform.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::lifetable::DensityPanel;

/// Default clipping applied to interior CDF values before taking logits.
pub const DEFAULT_CLIP_EPS: f64 = 1e-10;

/// Largest clr coordinate accepted by [`clr_inverse`]; larger values overflow `exp`.
pub const CLR_OVERFLOW_LIMIT: f64 = 700.0;

const MONOTONE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("non-positive death count {value} at year {year}, age {age}; rebuild counts from q_x")]
    ZeroCount { year: i32, age: u32, value: f64 },
    #[error("CDF row {row} decreases at column {col} ({prev} -> {next})")]
    NonMonotone { row: usize, col: usize, prev: f64, next: f64 },
    #[error("clr forecast coordinate {value} at column {col} exceeds {CLR_OVERFLOW_LIMIT}")]
    Divergent { col: usize, value: f64 },
    #[error("clip_eps must lie in (0, 1e-6], got {0}")]
    ClipEps(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TransformError>;

/// Cumulative age-at-death probabilities, last column identically 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfPanel {
    pub years: Vec<i32>,
    pub ages: Vec<u32>,
    pub cdf: DMatrix<f64>,
}

/// Logits of the interior CDF points; the terminal point (always 1) is dropped,
/// so there is one column fewer than ages.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitPanel {
    pub years: Vec<i32>,
    pub ages: Vec<u32>,
    pub z: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClrPanel {
    pub years: Vec<i32>,
    pub ages: Vec<u32>,
    pub beta: DMatrix<f64>,
    /// Per-age geometric mean of the counts across years.
    pub alpha: Vec<f64>,
}

pub fn cdf_row(d: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = d
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    out
}

pub fn cdf_forward(d: &DensityPanel) -> CdfPanel {
    let (n, p) = d.d.shape();
    let mut cdf = DMatrix::zeros(n, p);
    for t in 0..n {
        let row: Vec<f64> = d.d.row(t).iter().copied().collect();
        for (x, v) in cdf_row(&row).into_iter().enumerate() {
            cdf[(t, x)] = v;
        }
    }
    CdfPanel {
        years: d.years.clone(),
        ages: d.ages.clone(),
        cdf,
    }
}

/// `ln(v / (1 − v))` with `v` clipped to `[clip_eps, 1 − clip_eps]`. At the
/// clip bounds the complement is taken as `clip_eps` itself rather than
/// `1 − (1 − clip_eps)`, which loses eight digits.
pub fn logit(v: f64, clip_eps: f64) -> f64 {
    if v >= 1.0 - clip_eps {
        ((1.0 - clip_eps) / clip_eps).ln()
    } else if v <= clip_eps {
        (clip_eps / (1.0 - clip_eps)).ln()
    } else {
        (v / (1.0 - v)).ln()
    }
}

/// Overflow-safe logistic function.
pub fn inv_logit(z: f64) -> f64 {
    if z > 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_clip(clip_eps: f64) -> Result<()> {
    if clip_eps > 0.0 && clip_eps <= 1e-6 {
        Ok(())
    } else {
        Err(TransformError::ClipEps(clip_eps))
    }
}

pub fn logit_row(cdf: &[f64], clip_eps: f64) -> Vec<f64> {
    cdf[..cdf.len().saturating_sub(1)]
        .iter()
        .map(|&v| logit(v, clip_eps))
        .collect()
}

pub fn logit_transform(cdf: &CdfPanel, clip_eps: f64) -> Result<LogitPanel> {
    check_clip(clip_eps)?;
    let (n, p) = cdf.cdf.shape();
    if p < 2 {
        return Err(TransformError::Invalid("need at least two ages".into()));
    }
    let z = DMatrix::from_fn(n, p - 1, |t, x| logit(cdf.cdf[(t, x)], clip_eps));
    Ok(LogitPanel {
        years: cdf.years.clone(),
        ages: cdf.ages.clone(),
        z,
    })
}

/// Pool-adjacent-violators: least-squares non-decreasing fit with unit weights.
pub fn isotonic_non_decreasing(v: &mut [f64]) {
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(v.len());
    for &x in v.iter() {
        blocks.push((x, 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 1];
            let (s0, c0) = blocks[blocks.len() - 2];
            if s0 / c0 as f64 > s1 / c1 as f64 {
                blocks.pop();
                let last = blocks.last_mut().unwrap();
                *last = (s0 + s1, c0 + c1);
            } else {
                break;
            }
        }
    }
    let mut i = 0;
    for (s, c) in blocks {
        let m = s / c as f64;
        for slot in &mut v[i..i + c] {
            *slot = m;
        }
        i += c;
    }
}

/// Inverts one logit row back to a full CDF row (terminal 1 appended),
/// monotonised by isotonic regression.
pub fn inverse_logit_row(z: &[f64]) -> Vec<f64> {
    let mut d: Vec<f64> = z.iter().map(|&v| inv_logit(v)).collect();
    isotonic_non_decreasing(&mut d);
    d.push(1.0);
    d
}

pub fn inverse_logit(z: &LogitPanel) -> CdfPanel {
    let (n, q) = z.z.shape();
    let mut cdf = DMatrix::zeros(n, q + 1);
    for t in 0..n {
        let row: Vec<f64> = z.z.row(t).iter().copied().collect();
        for (x, v) in inverse_logit_row(&row).into_iter().enumerate() {
            cdf[(t, x)] = v;
        }
    }
    CdfPanel {
        years: z.years.clone(),
        ages: z.ages.clone(),
        cdf,
    }
}

/// First differences of a CDF row. Decreases beyond 1e-12 are rejected;
/// smaller ones are rounding and are set to zero.
pub fn density_row_from_cdf(cdf: &[f64], row: usize) -> Result<Vec<f64>> {
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(cdf.len());
    for (x, &v) in cdf.iter().enumerate() {
        let diff = v - prev;
        if diff < -MONOTONE_TOL {
            return Err(TransformError::NonMonotone {
                row,
                col: x,
                prev,
                next: v,
            });
        }
        out.push(diff.max(0.0));
        prev = v;
    }
    Ok(out)
}

pub fn cdf_to_density(cdf: &CdfPanel) -> Result<DensityPanel> {
    let (n, p) = cdf.cdf.shape();
    let mut d = DMatrix::zeros(n, p);
    for t in 0..n {
        let row: Vec<f64> = cdf.cdf.row(t).iter().copied().collect();
        for (x, v) in density_row_from_cdf(&row, t)?.into_iter().enumerate() {
            d[(t, x)] = v;
        }
    }
    DensityPanel::new(cdf.years.clone(), cdf.ages.clone(), d)
        .map_err(|e| TransformError::Invalid(e.to_string()))
}

/// Centred log-ratio transform of a strictly positive count panel:
/// `alpha[x] = exp(mean_t ln dx[t,x])`, `beta[t,x] = ln dx[t,x] − ln alpha[x]`.
pub fn clr_forward(years: &[i32], ages: &[u32], dx: &DMatrix<f64>) -> Result<ClrPanel> {
    let (n, p) = dx.shape();
    if n == 0 || n != years.len() || p != ages.len() {
        return Err(TransformError::Invalid(format!(
            "count panel is {n}x{p}, grid is {}x{}",
            years.len(),
            ages.len()
        )));
    }
    for t in 0..n {
        for x in 0..p {
            let v = dx[(t, x)];
            if !(v > 0.0) || !v.is_finite() {
                return Err(TransformError::ZeroCount {
                    year: years[t],
                    age: ages[x],
                    value: v,
                });
            }
        }
    }
    let logs = dx.map(f64::ln);
    let log_alpha: Vec<f64> = (0..p).map(|x| logs.column(x).sum() / n as f64).collect();
    let beta = DMatrix::from_fn(n, p, |t, x| logs[(t, x)] - log_alpha[x]);
    Ok(ClrPanel {
        years: years.to_vec(),
        ages: ages.to_vec(),
        beta,
        alpha: log_alpha.iter().map(|v| v.exp()).collect(),
    })
}

/// Inverse clr: `exp(beta)·alpha`, renormalised onto the simplex.
pub fn clr_inverse(beta: &[f64], alpha: &[f64]) -> Result<Vec<f64>> {
    if beta.len() != alpha.len() {
        return Err(TransformError::Invalid(format!(
            "beta has {} entries, alpha {}",
            beta.len(),
            alpha.len()
        )));
    }
    for (x, (&b, &a)) in beta.iter().zip(alpha).enumerate() {
        if !b.is_finite() {
            return Err(TransformError::Invalid(format!("beta[{x}] = {b}")));
        }
        if b > CLR_OVERFLOW_LIMIT {
            return Err(TransformError::Divergent { col: x, value: b });
        }
        if !(a > 0.0) || !a.is_finite() {
            return Err(TransformError::Invalid(format!("alpha[{x}] = {a}")));
        }
    }
    let draft: Vec<f64> = beta.iter().zip(alpha).map(|(b, a)| b.exp() * a).collect();
    let total: f64 = draft.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(TransformError::Invalid(format!("clr draft sums to {total}")));
    }
    Ok(draft.into_iter().map(|v| v / total).collect())
}
