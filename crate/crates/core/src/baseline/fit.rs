//! Poisson maximum-likelihood calibration by block-coordinate Newton-Raphson.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    cumulate, first_differences, impute_missing_periods, normalize_factors, poisson_loglik, BaselineParams,
    CommonTrendParams, ConstraintResiduals, CountryDeviationParams, MAX_EXPONENT,
};
use crate::data::MortalityPanel;
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Number of common factors (1 or 2).
    pub m: usize,
    /// Number of country-specific factors (0, 1 or 2).
    pub l: usize,
    pub max_sweeps: usize,
    /// Relative log-likelihood change accepted as converged.
    pub loglik_tol: f64,
    /// Largest accepted identifiability-constraint violation.
    pub constraint_tol: f64,
    /// Largest accepted Newton step (in parameter units) at convergence.
    pub step_tol: f64,
    pub impute_window: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            m: 2,
            l: 2,
            max_sweeps: 5000,
            loglik_tol: 1e-10,
            constraint_tol: 1e-8,
            step_tol: 1e-9,
            impute_window: super::IMPUTE_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub sweeps: usize,
    pub loglik: f64,
    /// Sup-norm of the log-likelihood gradient after the final sweep.
    pub gradient_norm: f64,
    pub constraints: ConstraintResiduals,
}

/// Log crude death rate at the first calendar year, the level anchor.
fn anchor(deaths: &DMatrix<f64>, exposures: &DMatrix<f64>, what: &str) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(deaths.nrows());
    for x in 0..deaths.nrows() {
        let (d, e) = (deaths[(x, 0)], exposures[(x, 0)]);
        if !(e > 0.0) || !(d > 0.0) {
            return Err(Error::validation(format!(
                "{what}: cannot anchor age index {x} at the first year (deaths {d}, exposure {e})"
            )));
        }
        out[x] = (d / e).ln();
    }
    Ok(out)
}

fn check_mask(active: &[bool], n_years: usize) -> Result<()> {
    if active.len() != n_years {
        return Err(Error::validation(format!(
            "active-year mask has {} entries for {} years",
            active.len(),
            n_years
        )));
    }
    if active.iter().filter(|a| **a).count() < 3 {
        return Err(Error::validation("fewer than three active years"));
    }
    Ok(())
}

/// Fit the common trend on the aggregated deaths and exposures of the panel.
pub fn fit_common_trend(
    panel: &MortalityPanel,
    active_years: &[bool],
    config: &FitConfig,
) -> Result<(CommonTrendParams, FitDiagnostics)> {
    let (d, e) = (&panel.common_deaths, &panel.common_exposures);
    check_mask(active_years, d.ncols())?;
    if !(1..=2).contains(&config.m) {
        return Err(Error::validation(format!("m = {} not supported (1 or 2)", config.m)));
    }
    let anchor = anchor(d, e, "aggregate panel")?;
    let offset = DMatrix::from_fn(d.nrows(), d.ncols(), |x, _| anchor[x]);
    let problem = Problem::new(d, e, offset, active_years, true)?;
    let init = Factors {
        a: problem.trend_slopes(),
        b: initial_loadings(d.nrows(), config.m),
        l: vec![DVector::zeros(d.ncols()); config.m],
    };
    let (f, diag) = problem.solve(init, config)?;
    Ok((CommonTrendParams { window: panel.window, a: f.a, b: f.b, l: f.l }, diag))
}

/// Fit the deviation of `target_country` from a fitted common trend.
///
/// Years in which the target country has incomplete data are excluded from
/// the likelihood and imputed like the other excluded years.
pub fn fit_country_deviation(
    panel: &MortalityPanel,
    common: &CommonTrendParams,
    target_country: &str,
    active_years: &[bool],
    config: &FitConfig,
) -> Result<(CountryDeviationParams, DVector<f64>, FitDiagnostics)> {
    let series = panel
        .country(target_country)
        .ok_or_else(|| Error::validation(format!("target country {target_country} is not in the panel")))?;
    check_mask(active_years, panel.window.n_years())?;
    if common.window != panel.window {
        return Err(Error::validation("common trend was fitted on a different window"));
    }
    let anchor = anchor(&series.deaths, &series.exposures, target_country)?;
    let base = common.surface();
    let offset = DMatrix::from_fn(base.nrows(), base.ncols(), |x, t| anchor[x] + base[(x, t)]);
    let active: Vec<bool> = active_years
        .iter()
        .enumerate()
        .map(|(t, &a)| a && series.present.column(t).iter().all(|p| *p))
        .collect();
    check_mask(&active, panel.window.n_years())?;
    let n_ages = panel.window.n_ages();
    if config.l == 0 {
        let problem = Problem::new(&series.deaths, &series.exposures, offset, &active, false)?;
        let eta = problem.eta(&Factors { a: DVector::zeros(n_ages), b: vec![], l: vec![] });
        let loglik = poisson_loglik(&eta, &series.deaths, &series.exposures, &active)?;
        let params = CountryDeviationParams { country_code: target_country.to_string(), beta: vec![], lambda: vec![] };
        let diag = FitDiagnostics { sweeps: 0, loglik, gradient_norm: 0.0, constraints: ConstraintResiduals::default() };
        return Ok((params, anchor, diag));
    }
    if config.l > 2 {
        return Err(Error::validation(format!("l = {} not supported (at most 2)", config.l)));
    }
    let problem = Problem::new(&series.deaths, &series.exposures, offset, &active, false)?;
    let init = Factors {
        a: DVector::zeros(n_ages),
        b: initial_loadings(n_ages, config.l),
        l: vec![DVector::zeros(panel.window.n_years()); config.l],
    };
    let (f, diag) = problem.solve(init, config)?;
    let params = CountryDeviationParams { country_code: target_country.to_string(), beta: f.b, lambda: f.l };
    Ok((params, anchor, diag))
}

/// Two-step calibration: the common trend on the aggregate, then the
/// target country's deviation holding the common part fixed.
pub fn fit_baseline(
    panel: &MortalityPanel,
    target_country: &str,
    active_years: &[bool],
    config: &FitConfig,
) -> Result<(BaselineParams, FitDiagnostics, FitDiagnostics)> {
    let (common, common_diag) = fit_common_trend(panel, active_years, config)?;
    let (deviation, anchor_country, dev_diag) =
        fit_country_deviation(panel, &common, target_country, active_years, config)?;
    let anchor_common = anchor(&panel.common_deaths, &panel.common_exposures, "aggregate panel")?;
    Ok((BaselineParams { common, deviation, anchor_common, anchor_country }, common_diag, dev_diag))
}

/// First loading flat, second a centred unit ramp: two flat starts would
/// leave the factors indistinguishable.
fn initial_loadings(n_ages: usize, k: usize) -> Vec<DVector<f64>> {
    let flat = DVector::from_element(n_ages, 1.0 / (n_ages as f64).sqrt());
    let mid = (n_ages as f64 - 1.0) / 2.0;
    let mut ramp = DVector::from_fn(n_ages, |x, _| x as f64 - mid);
    let norm = ramp.norm();
    if norm > 0.0 {
        ramp /= norm;
    }
    [flat, ramp].into_iter().take(k).collect()
}

struct Factors {
    a: DVector<f64>,
    b: Vec<DVector<f64>>,
    l: Vec<DVector<f64>>,
}

struct Problem<'a> {
    deaths: &'a DMatrix<f64>,
    exposures: &'a DMatrix<f64>,
    offset: DMatrix<f64>,
    active: Vec<bool>,
    trend: bool,
}

struct BlockStep {
    values: Vec<f64>,
    step: f64,
    gradient: f64,
}

impl<'a> Problem<'a> {
    fn new(
        deaths: &'a DMatrix<f64>,
        exposures: &'a DMatrix<f64>,
        offset: DMatrix<f64>,
        active: &[bool],
        trend: bool,
    ) -> Result<Self> {
        for x in 0..deaths.nrows() {
            let total: f64 = (0..deaths.ncols()).filter(|&t| active[t]).map(|t| deaths[(x, t)]).sum();
            if !(total > 0.0) {
                return Err(Error::validation(format!("degenerate panel: no deaths at age index {x} in active years")));
            }
            for t in (0..deaths.ncols()).filter(|&t| active[t]) {
                if !(exposures[(x, t)] > 0.0) {
                    return Err(Error::validation(format!(
                        "non-positive exposure at age index {x}, year index {t}"
                    )));
                }
            }
        }
        Ok(Self { deaths, exposures, offset, active: active.to_vec(), trend })
    }

    fn n_ages(&self) -> usize {
        self.deaths.nrows()
    }

    fn n_years(&self) -> usize {
        self.deaths.ncols()
    }

    /// Per-age least-squares slope of log crude rates over active cells with deaths.
    fn trend_slopes(&self) -> DVector<f64> {
        DVector::from_fn(self.n_ages(), |x, _| {
            let pts: Vec<(f64, f64)> = (0..self.n_years())
                .filter(|&t| self.active[t] && self.deaths[(x, t)] > 0.0)
                .map(|t| (t as f64, (self.deaths[(x, t)] / self.exposures[(x, t)]).ln()))
                .collect();
            if pts.len() < 2 {
                return 0.0;
            }
            let n = pts.len() as f64;
            let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
            sxy / sxx
        })
    }

    fn eta_cell(&self, f: &Factors, x: usize, t: usize) -> f64 {
        let mut v = self.offset[(x, t)];
        if self.trend {
            v += t as f64 * f.a[x];
        }
        for (b, l) in f.b.iter().zip(&f.l) {
            v += b[x] * l[t];
        }
        v
    }

    fn eta(&self, f: &Factors) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_ages(), self.n_years(), |x, t| self.eta_cell(f, x, t))
    }

    /// One damped Newton step on a Poisson sub-problem with linear predictor
    /// `base[j] + Σ_p θ[p]·cov[j][p]` over cells `j`.
    fn newton_block(
        &self,
        theta: &[f64],
        base: &[f64],
        cov: &[Vec<f64>],
        deaths: &[f64],
        expo: &[f64],
    ) -> BlockStep {
        let p = theta.len();
        let lin = |th: &[f64], j: usize| base[j] + cov[j].iter().zip(th).map(|(c, v)| c * v).sum::<f64>();
        let ll = |th: &[f64]| -> f64 {
            let mut s = 0.0;
            for j in 0..base.len() {
                let e = lin(th, j);
                if e > MAX_EXPONENT || !e.is_finite() {
                    return f64::NEG_INFINITY;
                }
                s += deaths[j] * e - expo[j] * e.exp();
            }
            s
        };
        let mut g = DVector::zeros(p);
        let mut h = DMatrix::zeros(p, p);
        for j in 0..base.len() {
            let mu = expo[j] * lin(theta, j).exp();
            let r = deaths[j] - mu;
            for a in 0..p {
                g[a] += r * cov[j][a];
                for b in 0..=a {
                    h[(a, b)] += mu * cov[j][a] * cov[j][b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        let gradient = g.amax();
        let max_diag = (0..p).map(|a| h[(a, a)]).fold(0.0, f64::max);
        if max_diag <= 0.0 || !max_diag.is_finite() {
            return BlockStep { values: theta.to_vec(), step: 0.0, gradient };
        }
        let mut reg = h.clone();
        for a in 0..p {
            reg[(a, a)] += 1e-13 * max_diag;
        }
        let delta = match reg.clone().cholesky() {
            Some(c) => c.solve(&g),
            None => DVector::from_fn(p, |a, _| if reg[(a, a)] > 0.0 { g[a] / reg[(a, a)] } else { 0.0 }),
        };
        let ll0 = ll(theta);
        let mut scale = 1.0;
        for _ in 0..40 {
            let cand: Vec<f64> = theta.iter().zip(delta.iter()).map(|(t, d)| t + scale * d).collect();
            let ll1 = ll(&cand);
            if ll1 >= ll0 - 1e-12 * ll0.abs() {
                return BlockStep { values: cand, step: scale * delta.amax(), gradient };
            }
            scale *= 0.5;
        }
        BlockStep { values: theta.to_vec(), step: 0.0, gradient }
    }

    /// Newton step on each age's `(A_x, B_x)`; ages are independent.
    fn update_ages(&self, f: &Factors) -> Vec<BlockStep> {
        let k = f.b.len();
        let years: Vec<usize> = (0..self.n_years()).filter(|&t| self.active[t]).collect();
        par::map_indexed(self.n_ages(), |x| {
            let mut theta = Vec::with_capacity(k + 1);
            if self.trend {
                theta.push(f.a[x]);
            }
            theta.extend(f.b.iter().map(|b| b[x]));
            let base: Vec<f64> = years.iter().map(|&t| self.offset[(x, t)]).collect();
            let cov: Vec<Vec<f64>> = years
                .iter()
                .map(|&t| {
                    let mut c = Vec::with_capacity(k + 1);
                    if self.trend {
                        c.push(t as f64);
                    }
                    c.extend(f.l.iter().map(|l| l[t]));
                    c
                })
                .collect();
            let d: Vec<f64> = years.iter().map(|&t| self.deaths[(x, t)]).collect();
            let e: Vec<f64> = years.iter().map(|&t| self.exposures[(x, t)]).collect();
            self.newton_block(&theta, &base, &cov, &d, &e)
        })
    }

    /// Newton step on each active year's period effects (the first year is fixed at zero).
    fn update_years(&self, f: &Factors) -> Vec<Option<BlockStep>> {
        let na = self.n_ages();
        let cov: Vec<Vec<f64>> = (0..na).map(|x| f.b.iter().map(|b| b[x]).collect()).collect();
        par::map_indexed(self.n_years(), |t| {
            if t == 0 || !self.active[t] {
                return None;
            }
            let theta: Vec<f64> = f.l.iter().map(|l| l[t]).collect();
            let base: Vec<f64> =
                (0..na).map(|x| self.offset[(x, t)] + if self.trend { t as f64 * f.a[x] } else { 0.0 }).collect();
            let d: Vec<f64> = (0..na).map(|x| self.deaths[(x, t)]).collect();
            let e: Vec<f64> = (0..na).map(|x| self.exposures[(x, t)]).collect();
            Some(self.newton_block(&theta, &base, &cov, &d, &e))
        })
    }

    fn impute(&self, f: &mut Factors, window: usize) -> Result<()> {
        let missing: Vec<bool> = self.active.iter().enumerate().map(|(t, &a)| t > 0 && !a).collect();
        if !missing.iter().any(|m| *m) {
            return Ok(());
        }
        for l in f.l.iter_mut() {
            let filled = impute_missing_periods(l.as_slice(), &missing, window)?;
            l.copy_from_slice(&filled);
        }
        Ok(())
    }

    fn normalize(&self, f: &mut Factors) -> Result<()> {
        let k: Vec<Vec<f64>> = f.l.iter().map(|l| first_differences(l.as_slice())).collect();
        let n = normalize_factors(&f.b, &k, self.trend)?;
        if self.trend {
            f.a += &n.trend_shift;
        }
        f.b = n.b;
        f.l = n.k.iter().map(|k| DVector::from_vec(cumulate(k))).collect();
        Ok(())
    }

    fn constraints(&self, f: &Factors) -> ConstraintResiduals {
        if self.trend {
            CommonTrendParams {
                window: crate::data::Window { age_min: 0, age_max: 0, year_min: 0, year_max: 0 },
                a: f.a.clone(),
                b: f.b.clone(),
                l: f.l.clone(),
            }
            .constraint_residuals()
        } else {
            CountryDeviationParams { country_code: String::new(), beta: f.b.clone(), lambda: f.l.clone() }
                .constraint_residuals()
        }
    }

    fn solve(&self, mut f: Factors, config: &FitConfig) -> Result<(Factors, FitDiagnostics)> {
        let mut prev = poisson_loglik(&self.eta(&f), self.deaths, self.exposures, &self.active)?;
        let mut gradient_norm = f64::INFINITY;
        for sweep in 1..=config.max_sweeps {
            let mut step: f64 = 0.0;
            let mut grad: f64 = 0.0;
            for (x, s) in self.update_ages(&f).into_iter().enumerate() {
                let mut it = s.values.into_iter();
                if self.trend {
                    f.a[x] = it.next().unwrap_or(f.a[x]);
                }
                for b in f.b.iter_mut() {
                    b[x] = it.next().unwrap_or(b[x]);
                }
                step = step.max(s.step);
                grad = grad.max(s.gradient);
            }
            for (t, s) in self.update_years(&f).into_iter().enumerate() {
                if let Some(s) = s {
                    for (l, v) in f.l.iter_mut().zip(s.values) {
                        l[t] = v;
                    }
                    step = step.max(s.step);
                    grad = grad.max(s.gradient);
                }
            }
            self.impute(&mut f, config.impute_window)?;
            self.normalize(&mut f)?;
            let ll = poisson_loglik(&self.eta(&f), self.deaths, self.exposures, &self.active)?;
            gradient_norm = grad;
            let constraints = self.constraints(&f);
            let rel = (ll - prev).abs() / ll.abs().max(1.0);
            prev = ll;
            if rel < config.loglik_tol && step < config.step_tol && constraints.max() < config.constraint_tol {
                let diag = FitDiagnostics { sweeps: sweep, loglik: ll, gradient_norm, constraints };
                return Ok((f, diag));
            }
        }
        Err(Error::NonConvergence { iterations: config.max_sweeps, gradient_norm })
    }
}
