//! Synthetic mortality data for tests and demonstrations.
//!
//! [`GompertzSpec`] generates period life tables from a Gompertz–Makeham hazard
//! with an infant term, a stochastic rate of mortality improvement and
//! age-by-year multiplicative noise:
//!
//! ```text
//! μ_t(x) = (a0·e^{−k·x} + c + a·e^{b·x}) · exp(κ_t + σ·ε_{t,x}),
//! κ_t = κ_{t−1} − r + s·ν_t,     q_t(x) = 1 − exp(−∫_x^{x+1} μ_t)
//! ```
//!
//! [`LogitFactorModel`] draws density panels directly from a known
//! CDF-logit factor model, for calibration experiments.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::lifetable::{rebuild_dx_from_qx, DensityPanel, LifeTableSeries, Sex, DEFAULT_RADIX};
use crate::transforms::{cdf_row, density_row_from_cdf, inverse_logit_row, logit_row, DEFAULT_CLIP_EPS};

#[derive(Debug, Clone, PartialEq)]
pub struct GompertzSpec {
    pub sex: Sex,
    pub first_year: i32,
    pub n_years: usize,
    pub max_age: u32,
    pub radix: f64,
    pub infant_level: f64,
    pub infant_decay: f64,
    pub makeham: f64,
    pub gompertz_level: f64,
    pub gompertz_slope: f64,
    /// Mean yearly decline of log-mortality.
    pub improvement: f64,
    /// Standard deviation of the yearly improvement shock.
    pub improvement_sd: f64,
    /// Standard deviation of the age-by-year log-hazard noise.
    pub noise_sd: f64,
    pub seed: u64,
}

impl GompertzSpec {
    /// Parameters loosely resembling a low-mortality population in 1975.
    pub fn preset(sex: Sex, first_year: i32, n_years: usize, seed: u64) -> Self {
        let (gompertz_level, gompertz_slope, improvement, infant_level) = match sex {
            Sex::Female => (2.0e-5, 0.100, 0.018, 0.008),
            Sex::Male => (5.0e-5, 0.095, 0.014, 0.010),
        };
        GompertzSpec {
            sex,
            first_year,
            n_years,
            max_age: 110,
            radix: DEFAULT_RADIX,
            infant_level,
            infant_decay: 1.5,
            makeham: 2.0e-4,
            gompertz_level,
            gompertz_slope,
            improvement,
            improvement_sd: 0.01,
            noise_sd: 0.03,
            seed,
        }
    }

    fn cumulative_hazard(&self, x: f64) -> f64 {
        let infant = self.infant_level / self.infant_decay * (1.0 - (-self.infant_decay * x).exp());
        let senescent = self.gompertz_level / self.gompertz_slope * ((self.gompertz_slope * x).exp() - 1.0);
        infant + self.makeham * x + senescent
    }

    pub fn generate(&self) -> LifeTableSeries {
        let p = self.max_age as usize + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut qx = DMatrix::zeros(self.n_years, p);
        let mut kappa = 0.0;
        for t in 0..self.n_years {
            if t > 0 {
                let shock: f64 = StandardNormal.sample(&mut rng);
                kappa += -self.improvement + self.improvement_sd * shock;
            }
            for x in 0..p - 1 {
                let base = self.cumulative_hazard(x as f64 + 1.0) - self.cumulative_hazard(x as f64);
                let noise: f64 = StandardNormal.sample(&mut rng);
                let h = base * (kappa + self.noise_sd * noise).exp();
                qx[(t, x)] = (1.0 - (-h).exp()).clamp(0.0, 1.0);
            }
            qx[(t, p - 1)] = 1.0;
        }
        let years = (0..self.n_years as i32).map(|t| self.first_year + t).collect();
        let ages = (0..=self.max_age).collect();
        rebuild_dx_from_qx(self.sex, years, ages, qx, self.radix).expect("generated q_x lie in [0, 1]")
    }
}

/// Female and male panels over the same years, with distinct seeds.
pub fn synthetic_pair(first_year: i32, n_years: usize, seed: u64) -> (LifeTableSeries, LifeTableSeries) {
    let f = GompertzSpec::preset(Sex::Female, first_year, n_years, seed).generate();
    let m = GompertzSpec::preset(Sex::Male, first_year, n_years, seed.wrapping_add(0x9E37_79B9)).generate();
    (f, m)
}

/// Renders a life-table panel in the HMD period-table text layout.
pub fn to_hmd_text(lt: &LifeTableSeries) -> String {
    let mut out = String::from("Synthetic life tables (period 1x1)\n\n");
    out.push_str("  Year  Age  mx  qx  ax  lx  dx  Lx  Tx  ex\n");
    let last = lt.n_ages() - 1;
    for (t, year) in lt.years.iter().enumerate() {
        for (x, age) in lt.ages.iter().enumerate() {
            let age = if x == last { format!("{age}+") } else { age.to_string() };
            out.push_str(&format!(
                "{year} {age} . {} 0.5 {} {} . . .\n",
                lt.qx[(t, x)],
                lt.lx[(t, x)],
                lt.dx[(t, x)]
            ));
        }
    }
    out
}

/// A known CDF-logit factor model: interior logits evolve as
/// `z_t = μ + Σ_k η_{t,k}·ψ_k + ε_t` with random-walk-with-drift scores and
/// i.i.d. Gaussian curve noise.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitFactorModel {
    pub mean: Vec<f64>,
    /// (p−1)×K, orthonormal columns.
    pub basis: DMatrix<f64>,
    pub drift: Vec<f64>,
    pub innovation_sd: Vec<f64>,
    pub noise_sd: f64,
}

impl LogitFactorModel {
    /// Mean curve from the first year of a Gompertz panel, two smooth
    /// orthonormal polynomial components over age.
    pub fn reference(sex: Sex) -> Self {
        let lt = GompertzSpec {
            noise_sd: 0.0,
            ..GompertzSpec::preset(sex, 2000, 1, 0)
        }
        .generate();
        let d: Vec<f64> = lt.dx.row(0).iter().map(|v| v / lt.radix).collect();
        let mean = logit_row(&cdf_row(&d), DEFAULT_CLIP_EPS);
        let q = mean.len();
        let mut basis = DMatrix::zeros(q, 2);
        for x in 0..q {
            let u = 2.0 * x as f64 / (q - 1) as f64 - 1.0;
            basis[(x, 0)] = 1.0;
            basis[(x, 1)] = u;
        }
        // Gram–Schmidt
        for k in 0..2 {
            for j in 0..k {
                let dot = basis.column(k).dot(&basis.column(j));
                let prev = basis.column(j).into_owned();
                let mut col = basis.column_mut(k);
                col -= prev * dot;
            }
            let norm = basis.column(k).norm();
            basis.column_mut(k).unscale_mut(norm);
        }
        LogitFactorModel {
            mean,
            basis,
            drift: vec![-0.15, 0.05],
            innovation_sd: vec![0.25, 0.1],
            noise_sd: 0.01,
        }
    }

    /// Simulates `n_years` consecutive densities starting at `first_year`.
    pub fn simulate(&self, first_year: i32, n_years: usize, seed: u64) -> DensityPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = self.mean.len();
        let k = self.basis.ncols();
        let mut scores = vec![0.0; k];
        let mut d = DMatrix::zeros(n_years, q + 1);
        for t in 0..n_years {
            for j in 0..k {
                let e: f64 = StandardNormal.sample(&mut rng);
                scores[j] += self.drift[j] + self.innovation_sd[j] * e;
            }
            let z: Vec<f64> = (0..q)
                .map(|x| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    let signal: f64 = (0..k).map(|j| scores[j] * self.basis[(x, j)]).sum();
                    self.mean[x] + signal + self.noise_sd * e
                })
                .collect();
            let row = density_row_from_cdf(&inverse_logit_row(&z), t).expect("isotonic CDF");
            for (x, v) in row.into_iter().enumerate() {
                d[(t, x)] = v;
            }
        }
        let years = (0..n_years as i32).map(|t| first_year + t).collect();
        let ages = (0..=q as u32).collect();
        DensityPanel::new(years, ages, d).expect("differenced CDF is a density")
    }
}

/// Wraps a density panel as a life-table series (`d_x = radix · density`).
pub fn density_to_series(sex: Sex, panel: &DensityPanel) -> LifeTableSeries {
    LifeTableSeries::from_density_panel(sex, panel, DEFAULT_RADIX).expect("positive radix")
}
