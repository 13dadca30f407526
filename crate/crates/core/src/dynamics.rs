//! Drift-plus-white-noise dynamics of the stacked period effects
//! `𝒦_t = (K_t, κ_t) = c + W_t`, estimated with geometrically decaying
//! observation weights `γ^(t_max − t)`.
//!
//! The drift of the country-specific components is fixed at zero.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mvn_logpdf_dense, psd_factor};
use crate::{par, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "DynParamsJson", try_from = "DynParamsJson")]
pub struct PeriodDynParams {
    pub c: DVector<f64>,
    pub sigma_w: DMatrix<f64>,
    pub gamma: f64,
    /// Leading components with a free drift; the rest have drift zero.
    pub n_free: usize,
    /// Smallest eigenvalue of `sigma_w` relative to its largest; zero or
    /// tiny values flag a rank-deficient estimate.
    pub min_eigen_ratio: f64,
}

#[derive(Serialize, Deserialize)]
struct DynParamsJson {
    c: Vec<f64>,
    sigma_w: Vec<Vec<f64>>,
    gamma: f64,
    n_free: usize,
    min_eigen_ratio: f64,
}

impl From<PeriodDynParams> for DynParamsJson {
    fn from(p: PeriodDynParams) -> Self {
        let d = p.c.len();
        Self {
            c: p.c.as_slice().to_vec(),
            sigma_w: (0..d).map(|i| (0..d).map(|j| p.sigma_w[(i, j)]).collect()).collect(),
            gamma: p.gamma,
            n_free: p.n_free,
            min_eigen_ratio: p.min_eigen_ratio,
        }
    }
}

impl TryFrom<DynParamsJson> for PeriodDynParams {
    type Error = String;
    fn try_from(j: DynParamsJson) -> std::result::Result<Self, String> {
        let d = j.c.len();
        if j.sigma_w.len() != d || j.sigma_w.iter().any(|r| r.len() != d) {
            return Err(format!("sigma_w must be {d}x{d}"));
        }
        Ok(Self {
            c: DVector::from_vec(j.c),
            sigma_w: DMatrix::from_fn(d, d, |a, b| j.sigma_w[a][b]),
            gamma: j.gamma,
            n_free: j.n_free,
            min_eigen_ratio: j.min_eigen_ratio,
        })
    }
}

impl PeriodDynParams {
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::validation(e.to_string()))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })
    }
}

/// Weighted Gaussian fit of the rows of `k` (years in increasing order).
///
/// The free drift entries are weighted means; the covariance is centred on
/// the constrained drift, so the zero-drift components are centred on zero.
pub fn fit_weighted_gaussian(k: &DMatrix<f64>, n_free: usize, gamma: f64) -> Result<PeriodDynParams> {
    let (n, d) = k.shape();
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::validation(format!("decay rate {gamma} outside (0, 1]")));
    }
    if n_free > d {
        return Err(Error::validation("more free drift components than dimensions"));
    }
    if n < d + 2 {
        return Err(Error::validation(format!("{n} observations; at least {} required", d + 2)));
    }
    let weights: Vec<f64> = (0..n).map(|t| gamma.powi((n - 1 - t) as i32)).collect();
    let total: f64 = weights.iter().sum();
    let mut c = DVector::zeros(d);
    for j in 0..n_free {
        c[j] = (0..n).map(|t| weights[t] * k[(t, j)]).sum::<f64>() / total;
    }
    let mut sigma = DMatrix::zeros(d, d);
    for t in 0..n {
        let r = k.row(t).transpose() - &c;
        sigma += &r * r.transpose() * weights[t];
    }
    sigma /= total;
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let eig = sigma.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let min_eigen_ratio = if hi > 0.0 { lo / hi } else { 0.0 };
    Ok(PeriodDynParams { c, sigma_w: sigma, gamma, n_free, min_eigen_ratio })
}

/// Decay rates `0.900, 0.901, …, 1.000`.
pub fn default_decay_grid() -> Vec<f64> {
    (900..=1000).map(|i| i as f64 / 1000.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySelection {
    pub gamma: f64,
    /// Average one-step-ahead log score per grid value.
    pub scores: Vec<(f64, f64)>,
}

/// Choose `γ` by the average one-step-ahead predictive log-density over
/// `first_eval_year..t_max`; ties go to the larger `γ`.
pub fn select_decay(
    k: &DMatrix<f64>,
    years: &[i32],
    n_free: usize,
    grid: &[f64],
    first_eval_year: i32,
    min_history: usize,
) -> Result<DecaySelection> {
    if years.len() != k.nrows() {
        return Err(Error::validation("years do not match the period-effect rows"));
    }
    if grid.is_empty() {
        return Err(Error::validation("empty decay grid"));
    }
    let history = years.iter().filter(|&&y| y < first_eval_year).count();
    if history < min_history {
        return Err(Error::validation(format!(
            "{history} years before {first_eval_year}; at least {min_history} required"
        )));
    }
    let eval: Vec<usize> = (0..years.len().saturating_sub(1)).filter(|&i| years[i] >= first_eval_year).collect();
    if eval.is_empty() {
        return Err(Error::validation("no evaluation years after the first evaluation year"));
    }
    let scores: Vec<f64> = par::map_slice(grid, |&gamma| {
        let mut total = 0.0;
        for &i in &eval {
            let hist = k.rows(0, i + 1).into_owned();
            let next = k.row(i + 1).transpose();
            let s = fit_weighted_gaussian(&hist, n_free, gamma)
                .ok()
                .and_then(|p| mvn_logpdf_dense(&next, &p.c, &p.sigma_w))
                .unwrap_or(f64::NEG_INFINITY);
            total += s;
        }
        total / eval.len() as f64
    });
    let mut best = 0;
    for i in 1..grid.len() {
        let better = scores[i] > scores[best] || (scores[i] == scores[best] && grid[i] > grid[best]);
        if better {
            best = i;
        }
    }
    if !scores[best].is_finite() {
        return Err(Error::numerical("every decay rate gives a singular one-step covariance"));
    }
    Ok(DecaySelection { gamma: grid[best], scores: grid.iter().copied().zip(scores).collect() })
}

/// Draw one period vector `c + F·ξ`, `ξ ~ N(0, I)`.
pub fn draw_period_vector<R: Rng>(c: &DVector<f64>, factor: &DMatrix<f64>, r: &mut R) -> DVector<f64> {
    let xi = DVector::from_fn(c.len(), |_, _| r.sample::<f64, _>(StandardNormal));
    c + factor * xi
}

/// `n_paths` independent paths of `n_years` period vectors (rows).
pub fn simulate_periods(params: &PeriodDynParams, n_years: usize, n_paths: usize, seed: u64) -> Result<Vec<DMatrix<f64>>> {
    let factor = psd_factor(&params.sigma_w)?;
    let d = params.dim();
    Ok(par::map_indexed(n_paths, |p| {
        let mut r = rng::stream(seed, p as u64);
        let mut out = DMatrix::zeros(n_years, d);
        for t in 0..n_years {
            let v = draw_period_vector(&params.c, &factor, &mut r);
            out.row_mut(t).copy_from(&v.transpose());
        }
        out
    }))
}
