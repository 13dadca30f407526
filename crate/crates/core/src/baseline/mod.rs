//! Two-factor multi-population baseline model.
//!
//! The model is calibrated in level form (log force of mortality relative to
//! the first calendar year) by Poisson maximum likelihood, then translated
//! back to improvement rates:
//!
//! ```text
//! log m[x,t] = anchor[x] + (t - t_min)·A[x] + Σ_i B_i[x]·L_i[t] + Σ_j β_j[x]·λ_j[t]
//! K_i[t] = L_i[t] - L_i[t-1],  κ_j[t] = λ_j[t] - λ_j[t-1]
//! ```

mod fit;
mod impute;
pub mod io;
mod normalize;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Window;
use crate::error::{Error, Result};

pub use fit::{fit_baseline, fit_common_trend, fit_country_deviation, FitConfig, FitDiagnostics};
pub use impute::{impute_missing_periods, IMPUTE_WINDOW};
pub use normalize::{normalize_factors, normalize_two_factor, Normalized};

/// Largest exponent accepted before `exp` is considered an overflow.
pub(crate) const MAX_EXPONENT: f64 = 700.0;

/// Common age/period effects shared by all countries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonTrendParams {
    pub window: Window,
    /// Log-improvement per year, by age.
    pub a: DVector<f64>,
    /// Unit-norm age loadings, one per factor.
    pub b: Vec<DVector<f64>>,
    /// Cumulated period effects over all calendar years; `L[t_min] = 0`.
    pub l: Vec<DVector<f64>>,
}

impl CommonTrendParams {
    pub fn m(&self) -> usize {
        self.b.len()
    }

    /// Improvement-form period effects `K_i[t] = L_i[t] - L_i[t-1]` for `t > t_min`.
    pub fn k(&self) -> Vec<Vec<f64>> {
        self.l.iter().map(|l| first_differences(l.as_slice())).collect()
    }

    /// Level-form predictor without the anchor, `(t - t_min)A + Σ B L`.
    pub fn surface(&self) -> DMatrix<f64> {
        let (na, ny) = (self.a.len(), self.window.n_years());
        DMatrix::from_fn(na, ny, |x, t| {
            t as f64 * self.a[x] + self.b.iter().zip(&self.l).map(|(b, l)| b[x] * l[t]).sum::<f64>()
        })
    }

    pub fn constraint_residuals(&self) -> ConstraintResiduals {
        factor_constraints(&self.b, &self.l, true)
    }
}

/// Country-specific deviation from the common trend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryDeviationParams {
    pub country_code: String,
    pub beta: Vec<DVector<f64>>,
    /// Cumulated deviation period effects; `λ[t_min] = 0`.
    pub lambda: Vec<DVector<f64>>,
}

impl CountryDeviationParams {
    pub fn l(&self) -> usize {
        self.beta.len()
    }

    pub fn kappa(&self) -> Vec<Vec<f64>> {
        self.lambda.iter().map(|l| first_differences(l.as_slice())).collect()
    }

    pub fn surface(&self, n_ages: usize, n_years: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n_ages, n_years, |x, t| {
            self.beta.iter().zip(&self.lambda).map(|(b, l)| b[x] * l[t]).sum::<f64>()
        })
    }

    pub fn constraint_residuals(&self) -> ConstraintResiduals {
        factor_constraints(&self.beta, &self.lambda, false)
    }
}

/// Fitted baseline for one target country.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub common: CommonTrendParams,
    pub deviation: CountryDeviationParams,
    /// `log m̂[x, t_min]` of the aggregated panel.
    pub anchor_common: DVector<f64>,
    /// `log m̂[x, t_min]` of the target country.
    pub anchor_country: DVector<f64>,
}

impl BaselineParams {
    pub fn window(&self) -> &Window {
        &self.common.window
    }

    /// Level-form predictor of the target country over the whole window.
    pub fn country_predictor(&self) -> DMatrix<f64> {
        let w = self.window();
        let mut eta = self.common.surface() + self.deviation.surface(w.n_ages(), w.n_years());
        for mut col in eta.column_iter_mut() {
            col += &self.anchor_country;
        }
        eta
    }

    /// Level-form predictor of the aggregated panel.
    pub fn common_predictor(&self) -> DMatrix<f64> {
        let mut eta = self.common.surface();
        for mut col in eta.column_iter_mut() {
            col += &self.anchor_common;
        }
        eta
    }

    /// Fitted improvement predictor `A + Σ B K + Σ β κ` for `t > t_min`,
    /// as an `ages x (years - 1)` matrix.
    pub fn improvement_predictor(&self) -> DMatrix<f64> {
        let w = self.window();
        let (k, kappa) = to_improvement_form(self);
        DMatrix::from_fn(w.n_ages(), w.n_years() - 1, |x, t| {
            self.common.a[x]
                + self.common.b.iter().zip(&k).map(|(b, k)| b[x] * k[t]).sum::<f64>()
                + self.deviation.beta.iter().zip(&kappa).map(|(b, k)| b[x] * k[t]).sum::<f64>()
        })
    }
}

/// Improvement-form period effects `(K, κ)`, each indexed from `t_min + 1`.
pub fn to_improvement_form(params: &BaselineParams) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    (params.common.k(), params.deviation.kappa())
}

pub(crate) fn first_differences(v: &[f64]) -> Vec<f64> {
    v.windows(2).map(|w| w[1] - w[0]).collect()
}

pub(crate) fn cumulate(k: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(k.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for &v in k {
        acc += v;
        out.push(acc);
    }
    out
}

/// Poisson log-likelihood `Σ d·η − E·exp(η)` over the active years, constant
/// terms omitted. Overflow of `exp(η)` is reported with the offending cell.
/// Summed with Neumaier compensation, so the result is within about one ulp
/// of the exact sum whatever the cell order.
pub fn poisson_loglik(
    eta: &DMatrix<f64>,
    deaths: &DMatrix<f64>,
    exposures: &DMatrix<f64>,
    active_years: &[bool],
) -> Result<f64> {
    if eta.shape() != deaths.shape() || eta.shape() != exposures.shape() {
        return Err(Error::validation("predictor, deaths and exposures differ in shape"));
    }
    if active_years.len() != eta.ncols() {
        return Err(Error::validation("active-year mask length differs from the year count"));
    }
    let mut ll = NeumaierSum::default();
    for (t, _) in active_years.iter().enumerate().filter(|(_, &a)| a) {
        for x in 0..eta.nrows() {
            let e = eta[(x, t)];
            if !e.is_finite() || e > MAX_EXPONENT {
                return Err(Error::numerical(format!(
                    "predictor overflow at cell (age index {x}, year index {t}): eta = {e}"
                )));
            }
            ll.add(deaths[(x, t)] * e);
            ll.add(-exposures[(x, t)] * e.exp());
        }
    }
    Ok(ll.total())
}

#[derive(Default)]
struct NeumaierSum {
    sum: f64,
    carry: f64,
}

impl NeumaierSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        self.carry += if self.sum.abs() >= v.abs() { (self.sum - t) + v } else { (v - t) + self.sum };
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Absolute violations of the identifiability constraints.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintResiduals {
    /// `max_i |Σ_x B_i[x]² − 1|`
    pub unit_norm: f64,
    /// `max_i |L_i[t_max]|` (zero-sum of `K_i`); zero when not imposed.
    pub terminal_zero: f64,
    /// `max_i |L_i[t_min]|`
    pub initial_zero: f64,
    /// `|Σ_x B_1 B_2|`
    pub age_orthogonality: f64,
    /// `|Σ_t K_1 K_2|`
    pub period_orthogonality: f64,
}

impl ConstraintResiduals {
    pub fn max(&self) -> f64 {
        [
            self.unit_norm,
            self.terminal_zero,
            self.initial_zero,
            self.age_orthogonality,
            self.period_orthogonality,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn factor_constraints(b: &[DVector<f64>], l: &[DVector<f64>], terminal: bool) -> ConstraintResiduals {
    let mut r = ConstraintResiduals::default();
    for (bi, li) in b.iter().zip(l) {
        r.unit_norm = r.unit_norm.max((bi.norm_squared() - 1.0).abs());
        r.initial_zero = r.initial_zero.max(li[0].abs());
        if terminal {
            r.terminal_zero = r.terminal_zero.max(li[li.len() - 1].abs());
        }
    }
    if b.len() == 2 {
        r.age_orthogonality = b[0].dot(&b[1]).abs();
        let k1 = first_differences(l[0].as_slice());
        let k2 = first_differences(l[1].as_slice());
        r.period_orthogonality = k1.iter().zip(&k2).map(|(a, b)| a * b).sum::<f64>().abs();
    }
    r
}
