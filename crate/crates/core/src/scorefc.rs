//! Additive-error exponential smoothing for principal component score series.
//!
//! Three non-seasonal models are fitted: simple exponential smoothing (ANN),
//! Holt's linear trend (AAN) and the damped trend (AAdN). Parameters maximise
//! the concentrated Gaussian innovations likelihood on a coarse grid followed by
//! coordinate descent on a 0.01 lattice; the minimum-AICc model is returned.
//!
//! State equations (error `e_t = y_t − ŷ_t`):
//!
//! ```text
//! ŷ_t = l_{t−1} + φ b_{t−1}
//! l_t = l_{t−1} + φ b_{t−1} + α e_t
//! b_t = φ b_{t−1} + β e_t
//! ```
//!
//! ANN drops the trend, AAN fixes φ = 1. For each candidate parameter vector
//! the initial states are profiled out by least squares.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const STEP: f64 = 0.01;
const ALPHA_MIN: f64 = 0.01;
const ALPHA_MAX: f64 = 0.99;
const PHI_MIN: f64 = 0.81;
const PHI_MAX: f64 = 0.98;
const REFINE_PASSES: usize = 2;
/// Floor for the innovation variance inside the log-likelihood, relative to the
/// squared scale of the series.
const SIGMA2_FLOOR: f64 = 1e-24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EtsError {
    #[error("series of length {len} is too short (need {need})")]
    TooShort { len: usize, need: usize },
    #[error("series contains a non-finite value at {0}")]
    NonFinite(usize),
    #[error("no candidate model produced a finite likelihood")]
    FitFailure,
}

pub type Result<T> = std::result::Result<T, EtsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EtsModel {
    Ann,
    Aan,
    AadN,
}

impl EtsModel {
    pub fn label(self) -> &'static str {
        match self {
            EtsModel::Ann => "ANN",
            EtsModel::Aan => "AAN",
            EtsModel::AadN => "AAdN",
        }
    }

    /// Free parameters counted by AICc: smoothing constants, initial states
    /// and the innovation variance.
    fn n_params(self) -> usize {
        match self {
            EtsModel::Ann => 3,
            EtsModel::Aan => 5,
            EtsModel::AadN => 6,
        }
    }

    fn min_len(self) -> usize {
        match self {
            EtsModel::Ann => 4,
            EtsModel::Aan | EtsModel::AadN => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtsParams {
    pub alpha: f64,
    /// Zero for ANN.
    pub beta: f64,
    /// 1 for AAN, unused for ANN.
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtsFit {
    pub model: EtsModel,
    pub params: EtsParams,
    pub level: f64,
    pub trend: f64,
    pub sigma2: f64,
    pub aicc: f64,
}

struct Pass {
    sse: f64,
    level: f64,
    trend: f64,
}

/// Damping used in the state recursion; ANN carries no trend.
fn damping(model: EtsModel, p: EtsParams) -> f64 {
    match model {
        EtsModel::Ann => 0.0,
        EtsModel::Aan => 1.0,
        EtsModel::AadN => p.phi,
    }
}

fn run_from(y: &[f64], model: EtsModel, p: EtsParams, level0: f64, trend0: f64) -> Pass {
    let phi = damping(model, p);
    let (mut level, mut trend) = (level0, if model == EtsModel::Ann { 0.0 } else { trend0 });
    let mut sse = 0.0;
    for &obs in y {
        let damped = phi * trend;
        let e = obs - (level + damped);
        sse += e * e;
        level = level + damped + p.alpha * e;
        trend = damped + p.beta * e;
    }
    Pass { sse, level, trend }
}

/// Initial states minimising the sum of squared innovations.
///
/// The innovations are affine in `(l_0, b_0)`: with zero initial states they
/// are `e⁰_t`, and each unit of initial state shifts them by `−w' F^{t−1}`
/// where `F` is the state transition under the error feedback. The optimum is
/// an ordinary least-squares solve; a near-singular system falls back to the
/// first observation and the mean early slope.
fn initial_states(y: &[f64], model: EtsModel, p: EtsParams) -> (f64, f64) {
    let phi = damping(model, p);
    let (alpha, beta) = (p.alpha, if model == EtsModel::Ann { 0.0 } else { p.beta });
    // F = [[1 − α, φ(1 − α)], [−β, φ(1 − β)]], w = [1, φ]
    let f = [[1.0 - alpha, phi * (1.0 - alpha)], [-beta, phi * (1.0 - beta)]];
    let mut basis = [[1.0, 0.0], [0.0, 1.0]]; // columns track F^{t−1} applied to unit states
    let (mut level, mut trend) = (0.0, 0.0);
    let (mut a11, mut a12, mut a22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &obs in y {
        let damped = phi * trend;
        let e0 = obs - (level + damped);
        let x1 = basis[0][0] + phi * basis[1][0];
        let x2 = basis[0][1] + phi * basis[1][1];
        a11 += x1 * x1;
        a12 += x1 * x2;
        a22 += x2 * x2;
        r1 += x1 * e0;
        r2 += x2 * e0;
        level = level + damped + alpha * e0;
        trend = damped + beta * e0;
        let mut next = [[0.0; 2]; 2];
        for (i, row) in f.iter().enumerate() {
            for j in 0..2 {
                next[i][j] = row[0] * basis[0][j] + row[1] * basis[1][j];
            }
        }
        basis = next;
    }
    if model == EtsModel::Ann {
        return if a11 > 0.0 { (r1 / a11, 0.0) } else { (y[0], 0.0) };
    }
    let det = a11 * a22 - a12 * a12;
    if det.abs() <= 1e-10 * (a11 * a22).max(f64::MIN_POSITIVE) {
        return (y[0], heuristic_trend(y));
    }
    ((a22 * r1 - a12 * r2) / det, (a11 * r2 - a12 * r1) / det)
}

fn run(y: &[f64], model: EtsModel, p: EtsParams) -> Pass {
    let (l0, b0) = initial_states(y, model, p);
    run_from(y, model, p, l0, b0)
}

/// Mean of the first differences over the first four observations.
fn heuristic_trend(y: &[f64]) -> f64 {
    let m = y.len().min(4);
    if m < 2 {
        return 0.0;
    }
    (y[m - 1] - y[0]) / (m - 1) as f64
}

fn grid(lo: f64, hi: f64) -> impl Iterator<Item = f64> {
    let steps = ((hi - lo) / STEP).round() as usize;
    (0..=steps).map(move |i| lo + i as f64 * STEP)
}

fn snap(v: f64) -> f64 {
    (v / STEP).round() * STEP
}

struct Search<'a> {
    y: &'a [f64],
    model: EtsModel,
    floor: f64,
}

impl Search<'_> {
    fn objective(&self, p: EtsParams) -> f64 {
        let m = self.y.len() as f64;
        let pass = run(self.y, self.model, p);
        m * (pass.sse / m).max(self.floor).ln()
    }

    fn admissible(&self, p: EtsParams) -> bool {
        p.alpha >= ALPHA_MIN - 1e-12
            && p.alpha <= ALPHA_MAX + 1e-12
            && (self.model == EtsModel::Ann || (p.beta >= ALPHA_MIN - 1e-12 && p.beta <= p.alpha + 1e-12))
    }

    /// Coarse grid (step 0.05 in every coordinate) then coordinate descent on
    /// the 0.01 lattice.
    fn optimise(&self) -> (EtsParams, f64) {
        let coarse = |lo: f64, hi: f64| {
            let n = ((hi - lo) / 0.05).round() as usize;
            (0..=n).map(move |i| snap(lo + i as f64 * 0.05)).collect::<Vec<_>>()
        };
        let alphas = coarse(0.05, 0.95);
        let phis = match self.model {
            EtsModel::AadN => coarse(0.85, 0.95),
            _ => vec![1.0],
        };
        let mut best = EtsParams { alpha: 0.5, beta: 0.0, phi: 1.0 };
        let mut best_obj = f64::INFINITY;
        let consider = |p: EtsParams, best: &mut EtsParams, best_obj: &mut f64| {
            let o = self.objective(p);
            if o < *best_obj {
                *best_obj = o;
                *best = p;
            }
        };
        for &alpha in &alphas {
            for &phi in &phis {
                match self.model {
                    EtsModel::Ann => consider(EtsParams { alpha, beta: 0.0, phi }, &mut best, &mut best_obj),
                    _ => {
                        for &beta in alphas.iter().filter(|b| **b <= alpha + 1e-12) {
                            consider(EtsParams { alpha, beta, phi }, &mut best, &mut best_obj);
                        }
                    }
                }
            }
        }

        for _ in 0..REFINE_PASSES {
            for alpha in grid(ALPHA_MIN, ALPHA_MAX) {
                let p = EtsParams { alpha: snap(alpha), ..best };
                if self.admissible(p) {
                    consider(p, &mut best, &mut best_obj);
                }
            }
            if self.model != EtsModel::Ann {
                for beta in grid(ALPHA_MIN, best.alpha) {
                    let p = EtsParams { beta: snap(beta), ..best };
                    if self.admissible(p) {
                        consider(p, &mut best, &mut best_obj);
                    }
                }
            }
            if self.model == EtsModel::AadN {
                for phi in grid(PHI_MIN, PHI_MAX) {
                    consider(EtsParams { phi: snap(phi), ..best }, &mut best, &mut best_obj);
                }
            }
        }
        (best, best_obj)
    }
}

fn fit_model(y: &[f64], model: EtsModel, floor: f64) -> Option<EtsFit> {
    let search = Search { y, model, floor };
    let (params, obj) = search.optimise();
    if !obj.is_finite() {
        return None;
    }
    let pass = run(y, model, params);
    let m = y.len() as f64;
    let k = model.n_params() as f64;
    // −2 log L of the concentrated likelihood, then the small-sample correction
    let neg2ll = m * ((2.0 * std::f64::consts::PI).ln() + 1.0) + obj;
    let aicc = neg2ll + 2.0 * k + 2.0 * k * (k + 1.0) / (m - k - 1.0).max(1.0);
    // innovation variance with the degrees of freedom of the smoothing
    // parameters and initial states removed
    let sigma2 = pass.sse / (m - (k - 1.0)).max(1.0);
    if !aicc.is_finite() || !sigma2.is_finite() {
        return None;
    }
    Some(EtsFit {
        model,
        params: EtsParams {
            phi: if model == EtsModel::AadN { params.phi } else { 1.0 },
            ..params
        },
        level: pass.level,
        trend: pass.trend,
        sigma2,
        aicc,
    })
}

/// Fits one candidate model to the series.
pub fn fit_ets_model(series: &[f64], model: EtsModel) -> Result<EtsFit> {
    check(series, model.min_len())?;
    fit_model(series, model, variance_floor(series)).ok_or(EtsError::FitFailure)
}

fn check(series: &[f64], need: usize) -> Result<()> {
    if series.len() < need {
        return Err(EtsError::TooShort { len: series.len(), need });
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(EtsError::NonFinite(i));
    }
    Ok(())
}

fn variance_floor(series: &[f64]) -> f64 {
    let scale = series.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    (SIGMA2_FLOOR * scale * scale).max(f64::MIN_POSITIVE)
}

/// Fits ANN (and the trend models when the series has at least 8 points) and
/// returns the one with the smallest AICc; ties go to the simpler model.
pub fn fit_ets(series: &[f64]) -> Result<EtsFit> {
    check(series, EtsModel::Ann.min_len())?;
    let floor = variance_floor(series);
    let mut best: Option<EtsFit> = None;
    for model in [EtsModel::Ann, EtsModel::Aan, EtsModel::AadN] {
        if series.len() < model.min_len() {
            continue;
        }
        if let Some(fit) = fit_model(series, model, floor) {
            if best.as_ref().is_none_or(|b| fit.aicc < b.aicc) {
                best = Some(fit);
            }
        }
    }
    best.ok_or(EtsError::FitFailure)
}

/// Point forecasts and innovation-based forecast variances for horizons 1..=h.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreForecast {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

pub fn forecast_scores(fit: &EtsFit, h: usize) -> ScoreForecast {
    let EtsParams { alpha, beta, phi } = fit.params;
    let mut mean = Vec::with_capacity(h);
    let mut variance = Vec::with_capacity(h);
    let mut damp_sum = 0.0;
    let mut phi_pow = 1.0;
    let mut acc = 0.0;
    for step in 1..=h {
        // mean uses Σ_{j=1}^{step} φ^j; variance needs c_{step−1}
        let c_prev = match fit.model {
            EtsModel::Ann => alpha,
            EtsModel::Aan => alpha + beta * (step - 1) as f64,
            EtsModel::AadN => alpha + beta * damp_sum,
        };
        if step > 1 {
            acc += c_prev * c_prev;
        }
        match fit.model {
            EtsModel::Ann => mean.push(fit.level),
            EtsModel::Aan => mean.push(fit.level + step as f64 * fit.trend),
            EtsModel::AadN => {
                phi_pow *= phi;
                damp_sum += phi_pow;
                mean.push(fit.level + damp_sum * fit.trend);
            }
        }
        variance.push(fit.sigma2 * (1.0 + acc));
    }
    ScoreForecast { mean, variance }
}
