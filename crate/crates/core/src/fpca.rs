//! Functional principal component decomposition of unconstrained panels.
//!
//! Curves live on an integer age grid with unit spacing, so the functional inner
//! product is the plain dot product and eigenfunctions are eigenvectors of the
//! p×p sample covariance (divisor n − 1).

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Eigenvalues below `EVR_TAU · λ_1` end the eigenvalue-ratio search.
pub const EVR_TAU: f64 = 1e-12;
pub const DEFAULT_EVR_KMAX: usize = 10;
pub const DEFAULT_K: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FpcaError {
    #[error("need at least 3 curves, got {0}")]
    TooFewCurves(usize),
    #[error("panel contains a non-finite value at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("panel has zero variance at every grid point")]
    DegenerateCovariance,
    #[error("{series} series has zero standard deviation at grid index {index}")]
    ZeroVariance { series: &'static str, index: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("malformed model json: {0}")]
    Json(String),
}

pub type Result<T> = std::result::Result<T, FpcaError>;

/// How many components to retain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComponentSelector {
    Fixed(usize),
    Evr { kmax: usize },
}

impl Default for ComponentSelector {
    fn default() -> Self {
        ComponentSelector::Fixed(DEFAULT_K)
    }
}

impl ComponentSelector {
    pub fn label(&self) -> String {
        match self {
            ComponentSelector::Fixed(k) => format!("K={k}"),
            ComponentSelector::Evr { .. } => "EVR".to_string(),
        }
    }
}

/// Eigenvalue-ratio rule: `K = argmin_{1≤k≤kmax} λ_{k+1}/λ_k`, stopping at the
/// first `λ_k < τ·λ_1`.
pub fn select_k_evr(lambda_all: &[f64], kmax: usize) -> usize {
    if lambda_all.len() < 2 || !(lambda_all[0] > 0.0) {
        return 1;
    }
    let floor = EVR_TAU * lambda_all[0];
    let mut best = 1;
    let mut best_ratio = f64::INFINITY;
    for k in 1..=kmax.min(lambda_all.len() - 1) {
        let lk = lambda_all[k - 1];
        if lk < floor {
            break;
        }
        let ratio = lambda_all[k] / lk;
        if ratio < best_ratio {
            best_ratio = ratio;
            best = k;
        }
    }
    best
}

/// A fitted Karhunen–Loève expansion truncated at `K` terms.
#[derive(Debug, Clone, PartialEq)]
pub struct FpcaModel {
    pub mu: Vec<f64>,
    /// p×K, orthonormal columns.
    pub psi: DMatrix<f64>,
    /// Retained eigenvalues, non-increasing.
    pub lambda: Vec<f64>,
    /// Full eigenvalue spectrum, used for component selection and reporting.
    pub lambda_all: Vec<f64>,
    /// n×K.
    pub scores: DMatrix<f64>,
    /// n×p.
    pub residuals: DMatrix<f64>,
}

impl FpcaModel {
    pub fn k(&self) -> usize {
        self.psi.ncols()
    }

    pub fn n_points(&self) -> usize {
        self.mu.len()
    }

    /// `mu + Σ_k scores[k]·psi[·,k]`.
    pub fn curve(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = self.mu.clone();
        for (k, s) in scores.iter().enumerate() {
            for (x, o) in out.iter_mut().enumerate() {
                *o += s * self.psi[(x, k)];
            }
        }
        out
    }

    /// In-sample fit without residuals, n×p.
    pub fn fitted(&self) -> DMatrix<f64> {
        let n = self.scores.nrows();
        let mut out = &self.scores * self.psi.transpose();
        for t in 0..n {
            for (x, m) in self.mu.iter().enumerate() {
                out[(t, x)] += m;
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&FpcaJson::from(self)).expect("plain numeric struct")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: FpcaJson = serde_json::from_str(text).map_err(|e| FpcaError::Json(e.to_string()))?;
        j.try_into()
    }
}

/// Serialized layout; matrices are stored column-major.
#[derive(Debug, Serialize, Deserialize)]
struct FpcaJson {
    n: usize,
    p: usize,
    k: usize,
    mu: Vec<f64>,
    psi: Vec<f64>,
    lambda: Vec<f64>,
    lambda_all: Vec<f64>,
    scores: Vec<f64>,
    residuals: Vec<f64>,
}

impl From<&FpcaModel> for FpcaJson {
    fn from(m: &FpcaModel) -> Self {
        FpcaJson {
            n: m.scores.nrows(),
            p: m.mu.len(),
            k: m.k(),
            mu: m.mu.clone(),
            psi: m.psi.as_slice().to_vec(),
            lambda: m.lambda.clone(),
            lambda_all: m.lambda_all.clone(),
            scores: m.scores.as_slice().to_vec(),
            residuals: m.residuals.as_slice().to_vec(),
        }
    }
}

impl TryFrom<FpcaJson> for FpcaModel {
    type Error = FpcaError;

    fn try_from(j: FpcaJson) -> Result<Self> {
        if j.mu.len() != j.p
            || j.psi.len() != j.p * j.k
            || j.lambda.len() != j.k
            || j.scores.len() != j.n * j.k
            || j.residuals.len() != j.n * j.p
        {
            return Err(FpcaError::Json("array lengths disagree with n, p, k".into()));
        }
        Ok(FpcaModel {
            mu: j.mu,
            psi: DMatrix::from_column_slice(j.p, j.k, &j.psi),
            lambda: j.lambda,
            lambda_all: j.lambda_all,
            scores: DMatrix::from_column_slice(j.n, j.k, &j.scores),
            residuals: DMatrix::from_column_slice(j.n, j.p, &j.residuals),
        })
    }
}

fn column_means(z: &DMatrix<f64>) -> Vec<f64> {
    let n = z.nrows() as f64;
    (0..z.ncols()).map(|x| z.column(x).sum() / n).collect()
}

fn validate(z: &DMatrix<f64>) -> Result<()> {
    let (n, p) = z.shape();
    if n < 3 {
        return Err(FpcaError::TooFewCurves(n));
    }
    if p == 0 {
        return Err(FpcaError::Shape("panel has no grid points".into()));
    }
    for t in 0..n {
        for x in 0..p {
            if !z[(t, x)].is_finite() {
                return Err(FpcaError::NonFinite(t, x));
            }
        }
    }
    Ok(())
}

/// Sample covariance with divisor n − 1.
pub fn sample_covariance(z: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let mu = column_means(z);
    let n = z.nrows();
    let centred = DMatrix::from_fn(n, z.ncols(), |t, x| z[(t, x)] - mu[x]);
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    (mu, cov)
}

/// Eigenpairs of a symmetric matrix sorted by decreasing eigenvalue, negative
/// round-off clamped to zero, each vector signed so its largest-magnitude entry
/// is positive.
fn sorted_eigen(cov: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let p = cov.nrows();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let mut vectors = DMatrix::zeros(p, p);
    for (k, &i) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(i);
        let mut pivot = 0;
        for x in 0..p {
            if col[x].abs() > col[pivot].abs() {
                pivot = x;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for x in 0..p {
            vectors[(x, k)] = sign * col[x];
        }
    }
    (values, vectors)
}

fn retained(selector: ComponentSelector, lambda_all: &[f64], n: usize, p: usize) -> usize {
    let cap = (n - 1).min(p);
    let k = match selector {
        ComponentSelector::Fixed(k) => k,
        ComponentSelector::Evr { kmax } => select_k_evr(lambda_all, kmax),
    };
    k.clamp(1, cap.max(1))
}

/// Decomposes a panel, optionally tolerating an all-zero-variance panel, which
/// yields a model with no components.
fn fit_panel(z: &DMatrix<f64>, selector: ComponentSelector, allow_degenerate: bool) -> Result<FpcaModel> {
    validate(z)?;
    let (n, p) = z.shape();
    let (mu, cov) = sample_covariance(z);
    let centred = DMatrix::from_fn(n, p, |t, x| z[(t, x)] - mu[x]);
    if cov.trace() <= 0.0 {
        if !allow_degenerate {
            return Err(FpcaError::DegenerateCovariance);
        }
        return Ok(FpcaModel {
            mu,
            psi: DMatrix::zeros(p, 0),
            lambda: vec![],
            lambda_all: vec![0.0; p],
            scores: DMatrix::zeros(n, 0),
            residuals: centred,
        });
    }
    let (lambda_all, vectors) = sorted_eigen(cov);
    let k = retained(selector, &lambda_all, n, p);
    let psi = vectors.columns(0, k).into_owned();
    let scores = &centred * &psi;
    let residuals = &centred - &scores * psi.transpose();
    Ok(FpcaModel {
        mu,
        psi,
        lambda: lambda_all[..k].to_vec(),
        lambda_all,
        scores,
        residuals,
    })
}

/// Univariate decomposition of an n×p panel.
pub fn fit_ufts(z: &DMatrix<f64>, selector: ComponentSelector) -> Result<FpcaModel> {
    fit_panel(z, selector, false)
}

/// How each series is scaled before stacking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MftsScaling {
    /// Divide by the per-age standard deviation.
    #[default]
    PerAge,
    /// Divide by one scalar per series, the root mean per-age variance.
    Scalar,
}

/// Centre and scale used to stack the two series; the female block comes first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationRecord {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl StandardizationRecord {
    /// Maps a standardized stacked curve back to the original scale.
    pub fn destandardize(&self, stacked: &[f64]) -> Vec<f64> {
        stacked
            .iter()
            .zip(self.scale.iter().zip(&self.center))
            .map(|(v, (s, c))| v * s + c)
            .collect()
    }
}

fn standardize(
    z: &DMatrix<f64>,
    series: &'static str,
    scaling: MftsScaling,
) -> Result<(DMatrix<f64>, Vec<f64>, Vec<f64>)> {
    let (n, p) = z.shape();
    let (mu, cov) = sample_covariance(z);
    let sd: Vec<f64> = (0..p).map(|x| cov[(x, x)].sqrt()).collect();
    let scale = match scaling {
        MftsScaling::PerAge => {
            if let Some(index) = sd.iter().position(|s| !(*s > 0.0)) {
                return Err(FpcaError::ZeroVariance { series, index });
            }
            sd
        }
        MftsScaling::Scalar => {
            let s = (cov.trace() / p as f64).sqrt();
            if !(s > 0.0) {
                return Err(FpcaError::ZeroVariance { series, index: 0 });
            }
            vec![s; p]
        }
    };
    let out = DMatrix::from_fn(n, p, |t, x| (z[(t, x)] - mu[x]) / scale[x]);
    Ok((out, mu, scale))
}

/// Stacks the standardized female and male panels side by side (n×2p) and
/// decomposes them jointly. Rows `0..p` of `psi` are the female block.
pub fn fit_mfts(
    zf: &DMatrix<f64>,
    zm: &DMatrix<f64>,
    selector: ComponentSelector,
    scaling: MftsScaling,
) -> Result<(FpcaModel, StandardizationRecord)> {
    if zf.shape() != zm.shape() {
        return Err(FpcaError::Shape(format!(
            "female panel {:?} vs male panel {:?}",
            zf.shape(),
            zm.shape()
        )));
    }
    validate(zf)?;
    validate(zm)?;
    let (n, p) = zf.shape();
    let (sf, cf, scf) = standardize(zf, "female", scaling)?;
    let (sm, cm, scm) = standardize(zm, "male", scaling)?;
    let stacked = DMatrix::from_fn(n, 2 * p, |t, x| if x < p { sf[(t, x)] } else { sm[(t, x - p)] });
    let model = fit_ufts(&stacked, selector)?;
    let record = StandardizationRecord {
        center: cf.into_iter().chain(cm).collect(),
        scale: scf.into_iter().chain(scm).collect(),
    };
    Ok((model, record))
}

/// Two-stage decomposition `Z^s = μ^s + R^c + U^s`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultilevelModel {
    pub mu_f: Vec<f64>,
    pub mu_m: Vec<f64>,
    /// Fitted to the average of the two centred panels.
    pub common: FpcaModel,
    pub resid_f: FpcaModel,
    pub resid_m: FpcaModel,
}

impl MultilevelModel {
    /// `μ^s + R̂^c + Û^s + ε^s` for one sex; equals the input panel.
    pub fn reconstruct(&self, female: bool) -> DMatrix<f64> {
        let (mu, resid) = if female {
            (&self.mu_f, &self.resid_f)
        } else {
            (&self.mu_m, &self.resid_m)
        };
        let mut out = self.common.fitted() + resid.fitted() + &resid.residuals;
        for t in 0..out.nrows() {
            for (x, m) in mu.iter().enumerate() {
                out[(t, x)] += m;
            }
        }
        out
    }
}

pub fn fit_mlfts(zf: &DMatrix<f64>, zm: &DMatrix<f64>, selector: ComponentSelector) -> Result<MultilevelModel> {
    if zf.shape() != zm.shape() {
        return Err(FpcaError::Shape(format!(
            "female panel {:?} vs male panel {:?}",
            zf.shape(),
            zm.shape()
        )));
    }
    validate(zf)?;
    validate(zm)?;
    let (n, p) = zf.shape();
    let mu_f = column_means(zf);
    let mu_m = column_means(zm);
    let cf = DMatrix::from_fn(n, p, |t, x| zf[(t, x)] - mu_f[x]);
    let cm = DMatrix::from_fn(n, p, |t, x| zm[(t, x)] - mu_m[x]);
    let average = (&cf + &cm) * 0.5;
    let common = fit_panel(&average, selector, true)?;
    let trend = common.fitted();
    let uf = &cf - &trend;
    let um = &cm - &trend;
    let (resid_f, resid_m) = rayon::join(
        || fit_panel(&uf, selector, true),
        || fit_panel(&um, selector, true),
    );
    Ok(MultilevelModel {
        mu_f,
        mu_m,
        common,
        resid_f: resid_f?,
        resid_m: resid_m?,
    })
}
