//! End-to-end density forecasters.
//!
//! CDF methods: density → CDF → logit → functional PCA (univariate, stacked or
//! multilevel) → exponential smoothing of scores → inverse logit → differencing.
//! The clr method replaces the CDF-logit map by the centred log-ratio transform.
//!
//! Prediction intervals are pointwise quantiles of simulated paths: scores are
//! drawn from their Gaussian forecast distributions, an in-sample residual curve
//! is resampled with replacement, and each path is pushed through the inverse
//! transform.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fpca::{self, ComponentSelector, FpcaError, FpcaModel, MftsScaling};
use crate::lifetable::{normalize_to_density, LifeTableError, LifeTableSeries, Sex};
use crate::scorefc::{fit_ets, forecast_scores, EtsError, EtsFit, ScoreForecast};
use crate::transforms::{
    cdf_forward, clr_forward, clr_inverse, density_row_from_cdf, inverse_logit_row, logit_transform,
    TransformError, DEFAULT_CLIP_EPS,
};

pub const MIN_TRAINING_YEARS: usize = 16;
pub const MIN_BOOTSTRAP: usize = 1000;
pub const DEFAULT_BOOTSTRAP: usize = 5000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    LifeTable(#[from] LifeTableError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Fpca(#[from] FpcaError),
    #[error(transparent)]
    Ets(#[from] EtsError),
    #[error("{years} training years available, at least {need} required")]
    InsufficientHistory { years: usize, need: usize },
    #[error("{0}")]
    Series(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl PipelineError {
    /// Whether the failure comes from the input data rather than the numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            PipelineError::LifeTable(_)
                | PipelineError::Transform(TransformError::ZeroCount { .. })
                | PipelineError::InsufficientHistory { .. }
                | PipelineError::Series(_)
                | PipelineError::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    CdfUfts,
    CdfMfts,
    CdfMlfts,
    Clr,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::CdfUfts, Method::CdfMfts, Method::CdfMlfts, Method::Clr];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::CdfUfts => "cdf-ufts",
            Method::CdfMfts => "cdf-mfts",
            Method::CdfMlfts => "cdf-mlfts",
            Method::Clr => "clr",
        }
    }

    fn joint(self) -> bool {
        matches!(self, Method::CdfMfts | Method::CdfMlfts)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method '{s}' (expected cdf-ufts, cdf-mfts, cdf-mlfts or clr)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub selector: ComponentSelector,
    pub horizon: usize,
    /// Significance level; intervals have nominal coverage 1 − alpha.
    pub alpha: f64,
    pub bootstrap: usize,
    pub seed: u64,
    pub clip_eps: f64,
    pub mfts_scaling: MftsScaling,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            selector: ComponentSelector::default(),
            horizon: 16,
            alpha: 0.2,
            bootstrap: DEFAULT_BOOTSTRAP,
            seed: 1,
            clip_eps: DEFAULT_CLIP_EPS,
            mfts_scaling: MftsScaling::PerAge,
        }
    }
}

impl PipelineConfig {
    fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(PipelineError::Config("horizon must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(PipelineError::Config(format!("alpha {} not in (0, 1)", self.alpha)));
        }
        if self.bootstrap < MIN_BOOTSTRAP {
            return Err(PipelineError::Config(format!(
                "bootstrap path count {} below {MIN_BOOTSTRAP}",
                self.bootstrap
            )));
        }
        Ok(())
    }
}

/// Point and interval density forecasts for one sex and method.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub method: Method,
    pub sex: Sex,
    pub selector: ComponentSelector,
    /// Calendar years of the forecasts, `last + 1 ..= last + H`.
    pub years: Vec<i32>,
    pub ages: Vec<u32>,
    /// H×p, rows are densities.
    pub point: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub alpha: f64,
}

impl ForecastResult {
    pub fn horizon(&self) -> usize {
        self.point.nrows()
    }

    pub fn point_row(&self, h: usize) -> Vec<f64> {
        self.point.row(h - 1).iter().copied().collect()
    }
}

/// Per-component description of a fitted decomposition, for run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub name: String,
    pub k: usize,
    pub eigenvalues: Vec<f64>,
    pub ets: Vec<EtsFit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRun {
    pub method: Method,
    pub results: Vec<ForecastResult>,
    pub components: Vec<ComponentSummary>,
}

impl ForecastRun {
    pub fn for_sex(&self, sex: Sex) -> Option<&ForecastResult> {
        self.results.iter().find(|r| r.sex == sex)
    }
}

/// A decomposition together with forecasts of each score series.
struct ScoreModel {
    name: String,
    fpca: FpcaModel,
    fits: Vec<EtsFit>,
    forecasts: Vec<ScoreForecast>,
    /// Whether paths resample this model's in-sample residual curves.
    resample_residuals: bool,
    residual_scale: f64,
}

impl ScoreModel {
    fn new(name: String, fpca: FpcaModel, horizon: usize, resample_residuals: bool) -> Result<Self> {
        let k = fpca.k();
        let fits: Vec<EtsFit> = (0..k)
            .into_par_iter()
            .map(|c| {
                let series: Vec<f64> = fpca.scores.column(c).iter().copied().collect();
                fit_ets(&series)
            })
            .collect::<std::result::Result<_, _>>()?;
        let forecasts = fits.iter().map(|f| forecast_scores(f, horizon)).collect();
        let residual_scale = residual_inflation(fpca.residuals.nrows(), fpca.residuals.ncols(), k);
        Ok(ScoreModel {
            name,
            fpca,
            fits,
            forecasts,
            resample_residuals,
            residual_scale,
        })
    }

    fn mean_scores(&self, h: usize) -> Vec<f64> {
        self.forecasts.iter().map(|f| f.mean[h - 1]).collect()
    }

    /// One simulated curve at horizon `h` (1-based).
    fn draw(&self, h: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let scores: Vec<f64> = self
            .forecasts
            .iter()
            .map(|f| {
                let e: f64 = StandardNormal.sample(rng);
                f.mean[h - 1] + f.variance[h - 1].sqrt() * e
            })
            .collect();
        let mut curve = self.fpca.curve(&scores);
        if self.resample_residuals {
            let n = self.fpca.residuals.nrows();
            let t = rng.random_range(0..n);
            for (x, c) in curve.iter_mut().enumerate() {
                *c += self.residual_scale * self.fpca.residuals[(t, x)];
            }
        }
        curve
    }

    fn summary(&self) -> ComponentSummary {
        ComponentSummary {
            name: self.name.clone(),
            k: self.fpca.k(),
            eigenvalues: self.fpca.lambda_all.clone(),
            ets: self.fits.clone(),
        }
    }
}

/// A slice of one model's curve contributing to a sex's transformed forecast,
/// optionally rescaled elementwise.
struct Part {
    model: usize,
    start: usize,
    scale: Option<Vec<f64>>,
}

enum Back {
    Cdf,
    Clr(Vec<f64>),
}

struct SexPlan {
    sex: Sex,
    offset: Vec<f64>,
    parts: Vec<Part>,
    back: Back,
}

/// Everything needed to produce transformed-space curves and map them back.
struct Plan {
    method: Method,
    models: Vec<ScoreModel>,
    sexes: Vec<SexPlan>,
    ages: Vec<u32>,
    last_year: i32,
}

impl Plan {
    fn combine(&self, sex: &SexPlan, curves: &[Vec<f64>]) -> Vec<f64> {
        let mut z = sex.offset.clone();
        for part in &sex.parts {
            let c = &curves[part.model];
            for (x, v) in z.iter_mut().enumerate() {
                let raw = c[part.start + x];
                *v += match &part.scale {
                    Some(s) => raw * s[x],
                    None => raw,
                };
            }
        }
        z
    }

    fn back_transform(&self, sex: &SexPlan, z: &[f64]) -> Result<Vec<f64>> {
        match &sex.back {
            Back::Cdf => Ok(density_row_from_cdf(&inverse_logit_row(z), 0)?),
            Back::Clr(alpha) => Ok(clr_inverse(z, alpha)?),
        }
    }

    fn point(&self, h: usize) -> Result<Vec<Vec<f64>>> {
        let curves: Vec<Vec<f64>> = self.models.iter().map(|m| m.fpca.curve(&m.mean_scores(h))).collect();
        self.sexes
            .iter()
            .map(|s| self.back_transform(s, &self.combine(s, &curves)))
            .collect()
    }

    fn path(&self, h: usize, b: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((h as u64) << 32) | b as u64);
        let curves: Vec<Vec<f64>> = self.models.iter().map(|m| m.draw(h, &mut rng)).collect();
        self.sexes
            .iter()
            .map(|s| self.back_transform(s, &self.combine(s, &curves)))
            .collect()
    }

    fn run(&self, cfg: &PipelineConfig) -> Result<ForecastRun> {
        let p = self.ages.len();
        let hmax = cfg.horizon;
        let ns = self.sexes.len();
        let mut point = vec![DMatrix::zeros(hmax, p); ns];
        let mut lower = vec![DMatrix::zeros(hmax, p); ns];
        let mut upper = vec![DMatrix::zeros(hmax, p); ns];
        for h in 1..=hmax {
            for (s, row) in self.point(h)?.into_iter().enumerate() {
                for (x, v) in row.into_iter().enumerate() {
                    point[s][(h - 1, x)] = v;
                }
            }
            let paths: Vec<Vec<Vec<f64>>> = (0..cfg.bootstrap)
                .into_par_iter()
                .map(|b| self.path(h, b, cfg.seed))
                .collect::<Result<_>>()?;
            for s in 0..ns {
                let mut column = vec![0.0; paths.len()];
                for x in 0..p {
                    for (b, path) in paths.iter().enumerate() {
                        column[b] = path[s][x];
                    }
                    column.sort_by(f64::total_cmp);
                    lower[s][(h - 1, x)] = quantile_sorted(&column, cfg.alpha / 2.0);
                    upper[s][(h - 1, x)] = quantile_sorted(&column, 1.0 - cfg.alpha / 2.0);
                }
            }
        }
        let years: Vec<i32> = (1..=hmax as i32).map(|h| self.last_year + h).collect();
        let results = self
            .sexes
            .iter()
            .enumerate()
            .map(|(s, plan)| ForecastResult {
                method: self.method,
                sex: plan.sex,
                selector: cfg.selector,
                years: years.clone(),
                ages: self.ages.clone(),
                point: point[s].clone(),
                lower: lower[s].clone(),
                upper: upper[s].clone(),
                alpha: cfg.alpha,
            })
            .collect();
        Ok(ForecastRun {
            method: self.method,
            results,
            components: self.models.iter().map(ScoreModel::summary).collect(),
        })
    }
}

/// Rescales in-sample residual curves to the noise level they estimate: a
/// centred n×p panel fitted by K components keeps
/// `(n − 1)·p − K·(n − 1 + p − K)` residual degrees of freedom out of `n·p`.
pub fn residual_inflation(n: usize, p: usize, k: usize) -> f64 {
    let (n, p, k) = (n as f64, p as f64, k as f64);
    let dof = (n - 1.0) * p - k * (n - 1.0 + p - k);
    if dof >= 1.0 {
        (n * p / dof).sqrt()
    } else {
        1.0
    }
}

/// Linear-interpolation quantile (type 7) of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = prob.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn check_history(lt: &LifeTableSeries) -> Result<()> {
    if lt.n_years() < MIN_TRAINING_YEARS {
        return Err(PipelineError::InsufficientHistory {
            years: lt.n_years(),
            need: MIN_TRAINING_YEARS,
        });
    }
    Ok(())
}

fn logits(lt: &LifeTableSeries, clip_eps: f64) -> Result<DMatrix<f64>> {
    let density = normalize_to_density(lt)?;
    Ok(logit_transform(&cdf_forward(&density), clip_eps)?.z)
}

fn pick_pair(series: &[LifeTableSeries]) -> Result<(&LifeTableSeries, &LifeTableSeries)> {
    let f = series.iter().find(|s| s.sex == Sex::Female);
    let m = series.iter().find(|s| s.sex == Sex::Male);
    match (f, m) {
        (Some(f), Some(m)) => {
            if f.years != m.years || f.ages != m.ages {
                return Err(PipelineError::Series("female and male panels cover different years or ages".into()));
            }
            Ok((f, m))
        }
        _ => Err(PipelineError::Series("joint methods need both a female and a male series".into())),
    }
}

fn build_plan(method: Method, series: &[LifeTableSeries], cfg: &PipelineConfig) -> Result<Plan> {
    cfg.validate()?;
    if series.is_empty() {
        return Err(PipelineError::Series("no life-table series supplied".into()));
    }
    for s in series {
        check_history(s)?;
    }
    let h = cfg.horizon;
    let first = &series[0];
    let ages = first.ages.clone();
    let last_year = *first.years.last().unwrap();
    let q = ages.len() - 1;
    let mut models = Vec::new();
    let mut sexes = Vec::new();
    match method {
        Method::CdfUfts => {
            for lt in series {
                let fit = fpca::fit_ufts(&logits(lt, cfg.clip_eps)?, cfg.selector)?;
                models.push(ScoreModel::new(lt.sex.to_string(), fit, h, true)?);
                sexes.push(SexPlan {
                    sex: lt.sex,
                    offset: vec![0.0; q],
                    parts: vec![Part { model: models.len() - 1, start: 0, scale: None }],
                    back: Back::Cdf,
                });
            }
        }
        Method::CdfMfts => {
            let (f, m) = pick_pair(series)?;
            let (fit, rec) = fpca::fit_mfts(
                &logits(f, cfg.clip_eps)?,
                &logits(m, cfg.clip_eps)?,
                cfg.selector,
                cfg.mfts_scaling,
            )?;
            models.push(ScoreModel::new("stacked".into(), fit, h, true)?);
            for (i, sex) in [Sex::Female, Sex::Male].into_iter().enumerate() {
                let block = i * q..(i + 1) * q;
                sexes.push(SexPlan {
                    sex,
                    offset: rec.center[block.clone()].to_vec(),
                    parts: vec![Part {
                        model: 0,
                        start: block.start,
                        scale: Some(rec.scale[block].to_vec()),
                    }],
                    back: Back::Cdf,
                });
            }
        }
        Method::CdfMlfts => {
            let (f, m) = pick_pair(series)?;
            let ml = fpca::fit_mlfts(&logits(f, cfg.clip_eps)?, &logits(m, cfg.clip_eps)?, cfg.selector)?;
            models.push(ScoreModel::new("common".into(), ml.common, h, false)?);
            models.push(ScoreModel::new("female-residual".into(), ml.resid_f, h, true)?);
            models.push(ScoreModel::new("male-residual".into(), ml.resid_m, h, true)?);
            for (i, (sex, mu)) in [(Sex::Female, ml.mu_f), (Sex::Male, ml.mu_m)].into_iter().enumerate() {
                sexes.push(SexPlan {
                    sex,
                    offset: mu,
                    parts: vec![
                        Part { model: 0, start: 0, scale: None },
                        Part { model: i + 1, start: 0, scale: None },
                    ],
                    back: Back::Cdf,
                });
            }
        }
        Method::Clr => {
            for lt in series {
                let clr = clr_forward(&lt.years, &lt.ages, &lt.dx)?;
                let fit = fpca::fit_ufts(&clr.beta, cfg.selector)?;
                models.push(ScoreModel::new(lt.sex.to_string(), fit, h, true)?);
                sexes.push(SexPlan {
                    sex: lt.sex,
                    offset: vec![0.0; ages.len()],
                    parts: vec![Part { model: models.len() - 1, start: 0, scale: None }],
                    back: Back::Clr(clr.alpha),
                });
            }
        }
    }
    if method.joint() {
        sexes.sort_by_key(|s| s.sex);
    }
    Ok(Plan {
        method,
        models,
        sexes,
        ages,
        last_year,
    })
}

/// Runs any of the four methods. UFTS and clr forecast every supplied series
/// independently; MFTS and MLFTS need one female and one male series.
pub fn forecast(method: Method, series: &[LifeTableSeries], cfg: &PipelineConfig) -> Result<ForecastRun> {
    build_plan(method, series, cfg)?.run(cfg)
}

/// CDF-transformation forecasts (`method` must be one of the CDF variants).
pub fn forecast_cdf(method: Method, series: &[LifeTableSeries], cfg: &PipelineConfig) -> Result<ForecastRun> {
    if method == Method::Clr {
        return Err(PipelineError::Config("forecast_cdf called with the clr method".into()));
    }
    forecast(method, series, cfg)
}

/// Centred log-ratio forecasts for a single series.
pub fn forecast_clr(lt: &LifeTableSeries, cfg: &PipelineConfig) -> Result<ForecastResult> {
    let mut run = forecast(Method::Clr, std::slice::from_ref(lt), cfg)?;
    Ok(run.results.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifetable::{life_expectancy, DensityPanel};
    use crate::synthetic::{density_to_series, synthetic_pair};
    use crate::transforms::{cdf_row, logit_row};

    fn cfg(k: usize, h: usize) -> PipelineConfig {
        PipelineConfig {
            selector: ComponentSelector::Fixed(k),
            horizon: h,
            bootstrap: MIN_BOOTSTRAP,
            ..PipelineConfig::default()
        }
    }

    fn assert_valid(res: &ForecastResult) {
        for h in 0..res.horizon() {
            let row: Vec<f64> = res.point.row(h).iter().copied().collect();
            assert!(row.iter().all(|v| *v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for x in 0..row.len() {
                assert!(res.lower[(h, x)] <= res.upper[(h, x)]);
            }
        }
    }

    fn panel_from_rows(rows: Vec<Vec<f64>>, first_year: i32) -> DensityPanel {
        let n = rows.len();
        let p = rows[0].len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        DensityPanel::new(
            (0..n as i32).map(|t| first_year + t).collect(),
            (0..p as u32).collect(),
            DMatrix::from_row_slice(n, p, &flat),
        )
        .unwrap()
    }

    #[test]
    fn every_method_yields_valid_densities() {
        let (f, m) = synthetic_pair(1975, 30, 3);
        for method in Method::ALL {
            let run = forecast(method, &[f.clone(), m.clone()], &cfg(6, 4)).unwrap();
            assert_eq!(run.results.len(), 2);
            assert_eq!(run.results[0].sex, Sex::Female);
            assert_eq!(run.results[0].years, vec![2005, 2006, 2007, 2008]);
            for r in &run.results {
                assert_valid(r);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (f, m) = synthetic_pair(1975, 24, 9);
        let a = forecast(Method::CdfMlfts, &[f.clone(), m.clone()], &cfg(3, 3)).unwrap();
        let b = forecast(Method::CdfMlfts, &[f.clone(), m.clone()], &cfg(3, 3)).unwrap();
        assert_eq!(a, b);
        let mut other = cfg(3, 3);
        other.seed = 99;
        let c = forecast(Method::CdfMlfts, &[f, m], &other).unwrap();
        assert_eq!(a.results[0].point, c.results[0].point);
        assert_ne!(a.results[0].lower, c.results[0].lower);
    }

    #[test]
    fn horizons_are_nested() {
        let (f, m) = synthetic_pair(1980, 20, 4);
        let short = forecast(Method::CdfMfts, &[f.clone(), m.clone()], &cfg(3, 2)).unwrap();
        let long = forecast(Method::CdfMfts, &[f, m], &cfg(3, 6)).unwrap();
        for (a, b) in short.results.iter().zip(&long.results) {
            assert_eq!(a.point.rows(0, 2), b.point.rows(0, 2));
            assert_eq!(a.lower.rows(0, 2), b.lower.rows(0, 2));
            assert_eq!(a.upper.rows(0, 2), b.upper.rows(0, 2));
        }
    }

    #[test]
    fn errors() {
        let (f, m) = synthetic_pair(1975, 10, 1);
        assert_eq!(
            forecast(Method::CdfUfts, std::slice::from_ref(&f), &cfg(2, 2)).unwrap_err(),
            PipelineError::InsufficientHistory { years: 10, need: 16 }
        );
        let (f, _) = synthetic_pair(1975, 20, 1);
        assert!(matches!(forecast(Method::CdfMfts, std::slice::from_ref(&f), &cfg(2, 2)), Err(PipelineError::Series(_))));
        let mut bad = cfg(2, 2);
        bad.bootstrap = 10;
        assert!(matches!(forecast(Method::CdfUfts, std::slice::from_ref(&f), &bad), Err(PipelineError::Config(_))));
        let _ = m;
        let mut zero = f.clone();
        zero.dx[(3, 5)] = 0.0;
        zero.dx[(3, 6)] += f.dx[(3, 5)];
        assert!(matches!(
            forecast_clr(&zero, &cfg(2, 2)),
            Err(PipelineError::Transform(TransformError::ZeroCount { year: 1978, age: 5, .. }))
        ));
    }

    #[test]
    fn mfts_matches_ufts_for_identical_sexes() {
        let (f, _) = synthetic_pair(1975, 30, 5);
        let mut m = f.clone();
        m.sex = Sex::Male;
        let mut c = cfg(4, 5);
        c.mfts_scaling = MftsScaling::Scalar;
        let uf = forecast(Method::CdfUfts, std::slice::from_ref(&f), &c).unwrap();
        let mf = forecast(Method::CdfMfts, &[f.clone(), m.clone()], &c).unwrap();
        let diff = (&uf.results[0].point - &mf.results[0].point).amax();
        assert!(diff < 1e-6, "{diff}");
        let diff = (&mf.results[0].point - &mf.results[1].point).amax();
        assert!(diff < 1e-12);

        let ml = forecast(Method::CdfMlfts, &[f, m], &c).unwrap();
        assert_eq!(ml.components[1].eigenvalues, ml.components[2].eigenvalues);
        assert!((&ml.results[0].point - &ml.results[1].point).amax() < 1e-12);
    }

    #[test]
    fn stationary_panel_stays_in_hull() {
        use rand::SeedableRng;
        use rand_distr::Gamma;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let shape: Vec<f64> = (0..12).map(|x| 5.0 + 20.0 * (-(x as f64 - 7.0).powi(2) / 6.0).exp()).collect();
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let g: Vec<f64> = shape.iter().map(|&a| Gamma::new(a, 1.0).unwrap().sample(&mut rng)).collect();
                let s: f64 = g.iter().sum();
                g.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let panel = panel_from_rows(rows, 1980);
        let lt = density_to_series(Sex::Female, &panel);
        let res = forecast(Method::CdfUfts, &[lt], &cfg(3, 6)).unwrap();
        let ages = &panel.ages;
        let e0s: Vec<f64> = (0..40).map(|t| life_expectancy(&panel.row(t), ages).unwrap()).collect();
        let (lo, hi) = e0s.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
        for h in 1..=6 {
            let row = res.results[0].point_row(h);
            let e = life_expectancy(&row, ages).unwrap();
            assert!(e >= lo && e <= hi, "h={h}: {e} not in [{lo}, {hi}]");
            for x in 0..ages.len() {
                let col = panel.d.column(x);
                assert!(row[x] >= col.min() - 1e-9 && row[x] <= col.max() + 1e-9, "age {x}");
            }
        }
    }

    #[test]
    fn drifting_mode_moves_to_older_ages() {
        // logistic-shaped deaths whose location ages by 0.5 years per year
        let p = 60;
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|t| {
                let loc = 30.0 + 0.5 * t as f64;
                let cdf: Vec<f64> = (0..p)
                    .map(|x| if x + 1 == p { 1.0 } else { 1.0 / (1.0 + (-(x as f64 + 1.0 - loc) / 3.0).exp()) })
                    .collect();
                density_row_from_cdf(&cdf, t).unwrap()
            })
            .collect();
        let panel = panel_from_rows(rows, 1990);
        let lt = density_to_series(Sex::Male, &panel);
        let res = forecast(Method::CdfUfts, &[lt], &cfg(2, 10)).unwrap();
        let modes: Vec<usize> = (1..=10)
            .map(|h| {
                let row = res.results[0].point_row(h);
                (0..p).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap()
            })
            .collect();
        assert!(modes.windows(2).all(|w| w[1] >= w[0]), "{modes:?}");
        assert!(modes[9] > modes[0]);
    }

    #[test]
    fn constant_panel_clr_forecast_is_constant() {
        let base: Vec<f64> = (0..20).map(|x| 1.0 + x as f64).collect();
        let s: f64 = base.iter().sum();
        let row: Vec<f64> = base.iter().map(|v| v / s).collect();
        let mut rows = vec![row.clone(); 20];
        // a sliver of variation so the covariance is not degenerate
        rows[3][0] *= 1.0 + 1e-9;
        let t: f64 = rows[3].iter().sum();
        rows[3].iter_mut().for_each(|v| *v /= t);
        let lt = density_to_series(Sex::Female, &panel_from_rows(rows, 2000));
        let res = forecast_clr(&lt, &cfg(1, 5)).unwrap();
        for h in 1..=5 {
            for (a, b) in res.point_row(h).iter().zip(&row) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn clr_log_linear_panel_continues_analytically() {
        // counts built as base·exp(γ_t·φ_x) with γ linear in t, so that
        // β_{t,x} = (γ_t − γ̄)·φ_x exactly
        let p = 15;
        let phi: Vec<f64> = (0..p).map(|x| (x as f64 - 7.0) / 20.0).collect();
        let base: Vec<f64> = (0..p).map(|x| 1.0 + (x as f64 / 3.0).sin().abs()).collect();
        let n = 25;
        let counts_at = |t: f64| -> Vec<f64> { (0..p).map(|x| 1e4 * base[x] * ((2.0 - 0.3 * t) * phi[x]).exp()).collect() };
        let density_at = |t: f64| {
            let v = counts_at(t);
            let s: f64 = v.iter().sum();
            v.into_iter().map(|a| a / s).collect::<Vec<_>>()
        };
        let rows: Vec<Vec<f64>> = (0..n).map(|t| density_at(t as f64)).collect();
        let mut lt = density_to_series(Sex::Female, &panel_from_rows(rows, 1990));
        for t in 0..n {
            for (x, v) in counts_at(t as f64).into_iter().enumerate() {
                lt.dx[(t, x)] = v;
            }
        }
        let res = forecast_clr(&lt, &cfg(1, 4)).unwrap();
        for h in 1..=4 {
            let want = density_at((n - 1 + h) as f64);
            for (a, b) in res.point_row(h).iter().zip(&want) {
                assert!((a - b).abs() < 1e-6, "h={h}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn clr_in_sample_reconstruction() {
        let (f, _) = synthetic_pair(1975, 25, 2);
        let clr = clr_forward(&f.years, &f.ages, &f.dx).unwrap();
        let fit = fpca::fit_ufts(&clr.beta, ComponentSelector::Fixed(6)).unwrap();
        let last = fit.scores.nrows() - 1;
        let scores: Vec<f64> = fit.scores.row(last).iter().copied().collect();
        let recon = clr_inverse(&fit.curve(&scores), &clr.alpha).unwrap();
        let actual: Vec<f64> = f.dx.row(last).iter().map(|v| v / f.radix).collect();
        let resid = fit.residuals.row(last).amax();
        for (a, b) in recon.iter().zip(&actual) {
            assert!((a - b).abs() <= b * (2.0 * resid).exp_m1() + 1e-12);
        }
    }

    #[test]
    fn degenerate_simulation_collapses_intervals() {
        // a panel whose logits are exactly linear in time is fit without error
        // by AAN; with K = n − 1 the residuals vanish and the only remaining
        // variance is the (zero) innovation variance
        let p = 8;
        let rows: Vec<Vec<f64>> = (0..16)
            .map(|t| {
                let z: Vec<f64> = (0..p - 1).map(|x| -3.0 + x as f64 * 0.9 + 0.05 * t as f64).collect();
                density_row_from_cdf(&inverse_logit_row(&z), 0).unwrap()
            })
            .collect();
        let lt = density_to_series(Sex::Female, &panel_from_rows(rows, 2000));
        let res = forecast(Method::CdfUfts, &[lt], &cfg(1, 3)).unwrap();
        let r = &res.results[0];
        assert!((&r.lower - &r.point).amax() < 1e-9);
        assert!((&r.upper - &r.point).amax() < 1e-9);
        let _ = logit_row(&cdf_row(&[0.5, 0.5]), DEFAULT_CLIP_EPS);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.1), 1.4);
        assert_eq!(quantile_sorted(&[7.0], 0.9), 7.0);
    }
}
