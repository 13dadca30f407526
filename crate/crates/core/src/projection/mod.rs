//! Scenario generation: simulated period effects, regime paths per age
//! group, offset-constrained shock panels and the log-μ recursion
//! `log μ_t = log μ_{t−1} + A + Σ B K_t + Σ β κ_t + s_t`.

mod chain;
mod io;
mod shocks;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use chain::{most_probable_state, simulate_chain, MarkovPath, Regime};
pub use io::{quantile_sorted, QUANTILE_LEVELS};
pub use shocks::{hvs_runs, simulate_shock_panel, HvsRun, ShockMean, ShockPanel};

use crate::baseline::BaselineParams;
use crate::dynamics::{draw_period_vector, PeriodDynParams};
use crate::error::{Error, Result};
use crate::linalg::psd_factor;
use crate::regime::{AgeGroup, RegimeParams};
use crate::{par, rng};

/// Regime inputs of one age group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupProjection {
    pub group: AgeGroup,
    pub params: RegimeParams,
    /// Filtered state probabilities at the last observed year.
    pub init: [f64; 3],
    /// Summed observed residuals of a high-volatility spell still open at
    /// the last observed year; offset by the first projected run if it
    /// continues the spell.
    #[serde(default)]
    pub carry: Option<Vec<f64>>,
    #[serde(default)]
    pub forced: BTreeMap<i32, Regime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    pub n_years: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub shock_mean: ShockMean,
    pub shocks: bool,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self { n_years: 50, n_paths: 10_000, seed: 2024, shock_mean: ShockMean::Zero, shocks: true }
    }
}

/// Everything a single simulated path produced.
#[derive(Debug, Clone)]
pub struct PathDetail {
    /// Years x stacked period effects `(K, κ)`.
    pub periods: DMatrix<f64>,
    pub chains: Vec<MarkovPath>,
    pub shocks: Vec<ShockPanel>,
    /// Ages x projection years.
    pub log_mu: DMatrix<f64>,
}

/// Validated inputs of the projection recursion.
#[derive(Debug, Clone)]
pub struct ProjectionModel {
    pub age_min: u32,
    pub last_year: i32,
    pub a: DVector<f64>,
    pub b: Vec<DVector<f64>>,
    pub beta: Vec<DVector<f64>>,
    pub dynamics: PeriodDynParams,
    pub groups: Vec<GroupProjection>,
    pub anchor_mu: DVector<f64>,
    factor: DMatrix<f64>,
}

impl ProjectionModel {
    pub fn new(
        baseline: &BaselineParams,
        dynamics: PeriodDynParams,
        groups: Vec<GroupProjection>,
        anchor_mu: DVector<f64>,
    ) -> Result<Self> {
        let w = baseline.window();
        let na = w.n_ages();
        if anchor_mu.len() != na {
            return Err(Error::validation(format!("anchor has {} ages, baseline has {na}", anchor_mu.len())));
        }
        if let Some(x) = anchor_mu.iter().position(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::validation(format!("anchor rate at age {} is not positive", w.age_min + x as u32)));
        }
        let d = baseline.common.m() + baseline.deviation.l();
        if dynamics.dim() != d {
            return Err(Error::validation(format!("period dynamics have dimension {}, baseline needs {d}", dynamics.dim())));
        }
        let mut covered = vec![false; na];
        for g in &groups {
            if g.group.age_min < w.age_min || g.group.age_max > w.age_max || g.group.age_min > g.group.age_max {
                return Err(Error::validation(format!("age group {} lies outside ages {}-{}", g.group.name, w.age_min, w.age_max)));
            }
            if g.params.frak_b.len() != g.group.len() || g.params.age_min != g.group.age_min {
                return Err(Error::validation(format!("regime parameters do not match age group {}", g.group.name)));
            }
            if g.carry.as_ref().is_some_and(|c| c.len() != g.group.len()) {
                return Err(Error::validation(format!("carried residuals of group {} have the wrong length", g.group.name)));
            }
            let s: f64 = g.init.iter().sum();
            if g.init.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-8 {
                return Err(Error::validation(format!("initial probabilities of group {} are not a distribution", g.group.name)));
            }
            g.params.chain()?;
            for age in g.group.age_min..=g.group.age_max {
                let i = (age - w.age_min) as usize;
                if covered[i] {
                    return Err(Error::validation(format!("age {age} belongs to more than one group")));
                }
                covered[i] = true;
            }
        }
        let factor = psd_factor(&dynamics.sigma_w)?;
        Ok(Self {
            age_min: w.age_min,
            last_year: w.year_max,
            a: baseline.common.a.clone(),
            b: baseline.common.b.clone(),
            beta: baseline.deviation.beta.clone(),
            dynamics,
            groups,
            anchor_mu,
            factor,
        })
    }

    pub fn n_ages(&self) -> usize {
        self.a.len()
    }

    /// Improvement step for one year given the stacked period vector.
    fn drift(&self, x: usize, k: &[f64]) -> f64 {
        let m = self.b.len();
        self.a[x]
            + self.b.iter().enumerate().map(|(i, b)| b[x] * k[i]).sum::<f64>()
            + self.beta.iter().enumerate().map(|(j, b)| b[x] * k[m + j]).sum::<f64>()
    }

    /// Simulate path `index` under `cfg`. Period effects are drawn first, so
    /// switching shocks off leaves them unchanged.
    pub fn simulate_path(&self, cfg: &ProjectionConfig, index: usize) -> Result<PathDetail> {
        let mut r = rng::stream(cfg.seed, index as u64);
        let (ny, na, d) = (cfg.n_years, self.n_ages(), self.dynamics.dim());
        let mut periods = DMatrix::zeros(ny, d);
        for t in 0..ny {
            let v = draw_period_vector(&self.dynamics.c, &self.factor, &mut r);
            periods.row_mut(t).copy_from(&v.transpose());
        }
        let first_year = self.last_year + 1;
        let mut chains = Vec::with_capacity(self.groups.len());
        let mut panels = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            let path = simulate_chain(&g.params.chain()?, &g.init, first_year, ny, &g.forced, &mut r);
            let panel = simulate_shock_panel(&path, &g.params, g.carry.as_deref(), cfg.shock_mean, &mut r)?;
            chains.push(path);
            panels.push(panel);
        }
        let mut shock = DMatrix::zeros(na, ny);
        if cfg.shocks {
            for (g, p) in self.groups.iter().zip(&panels) {
                let off = (g.group.age_min - self.age_min) as usize;
                shock.rows_mut(off, g.group.len()).copy_from(&p.shocks);
            }
        }
        let mut log_mu = DMatrix::zeros(na, ny);
        for x in 0..na {
            let mut prev = self.anchor_mu[x].ln();
            for t in 0..ny {
                let k: Vec<f64> = periods.row(t).iter().copied().collect();
                let next = prev + self.drift(x, &k) + shock[(x, t)];
                if !next.is_finite() || next > crate::baseline::MAX_EXPONENT {
                    return Err(Error::numerical(format!(
                        "non-finite force of mortality at age {}, year {}, path {index}",
                        self.age_min + x as u32,
                        first_year + t as i32
                    )));
                }
                log_mu[(x, t)] = next;
                prev = next;
            }
        }
        Ok(PathDetail { periods, chains, shocks: panels, log_mu })
    }

    /// Best-estimate path: innovations and shocks set to zero.
    pub fn best_estimate(&self, n_years: usize) -> ScenarioSet {
        let k: Vec<f64> = self.dynamics.c.iter().copied().collect();
        let na = self.n_ages();
        let mut mu = Vec::with_capacity(na * n_years);
        let mut log = DVector::from_iterator(na, self.anchor_mu.iter().map(|m| m.ln()));
        for _ in 0..n_years {
            for x in 0..na {
                log[x] += self.drift(x, &k);
            }
            mu.extend(log.iter().map(|l| l.exp()));
        }
        ScenarioSet {
            age_min: self.age_min,
            n_ages: na,
            first_year: self.last_year + 1,
            n_years,
            n_paths: 1,
            seed: 0,
            anchor_mu: self.anchor_mu.iter().copied().collect(),
            mu,
            unoffset: vec![false],
        }
    }
}

/// Simulated force of mortality over ages, projection years and paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub age_min: u32,
    pub n_ages: usize,
    /// First projection year; the anchor sits at `first_year − 1`.
    pub first_year: i32,
    pub n_years: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Observed rates at the last observed year.
    pub anchor_mu: Vec<f64>,
    /// Path-major, then year, then age.
    pub mu: Vec<f64>,
    /// Paths holding a single-year shock run cut by the horizon, whose
    /// offsetting vector falls past the last year.
    pub unoffset: Vec<bool>,
}

impl ScenarioSet {
    fn index(&self, x: usize, t: usize, path: usize) -> usize {
        (path * self.n_years + t) * self.n_ages + x
    }

    pub fn mu(&self, x: usize, t: usize, path: usize) -> f64 {
        self.mu[self.index(x, t, path)]
    }

    pub fn q(&self, x: usize, t: usize, path: usize) -> f64 {
        -(-self.mu(x, t, path)).exp_m1()
    }

    pub fn ages(&self) -> impl Iterator<Item = u32> {
        self.age_min..self.age_min + self.n_ages as u32
    }

    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.first_year..self.first_year + self.n_years as i32
    }

    /// Ages x (1 + projection years) surface of `μ` for one path, starting
    /// with the anchor year.
    pub fn mu_surface(&self, path: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_ages, self.n_years + 1, |x, t| {
            if t == 0 {
                self.anchor_mu[x]
            } else {
                self.mu(x, t - 1, path)
            }
        })
    }
}

/// Simulate `cfg.n_paths` scenarios in parallel. Path `ι` draws from
/// stream `ι` of `cfg.seed`, so the result does not depend on the thread
/// count.
pub fn project_scenarios(model: &ProjectionModel, cfg: &ProjectionConfig) -> Result<ScenarioSet> {
    if cfg.n_paths == 0 || cfg.n_years == 0 {
        return Err(Error::validation("projection needs at least one path and one year"));
    }
    let paths = par::map_indexed(cfg.n_paths, |i| {
        model.simulate_path(cfg, i).map(|p| {
            let flag = cfg.shocks && p.shocks.iter().any(ShockPanel::has_unoffset_run);
            (p.log_mu, flag)
        })
    });
    let (na, ny) = (model.n_ages(), cfg.n_years);
    let mut mu = Vec::with_capacity(cfg.n_paths * na * ny);
    let mut unoffset = Vec::with_capacity(cfg.n_paths);
    for p in paths {
        let (log_mu, flag) = p?;
        for t in 0..ny {
            mu.extend(log_mu.column(t).iter().map(|l| l.exp()));
        }
        unoffset.push(flag);
    }
    Ok(ScenarioSet {
        age_min: model.age_min,
        n_ages: na,
        first_year: model.last_year + 1,
        n_years: ny,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        anchor_mu: model.anchor_mu.iter().copied().collect(),
        mu,
        unoffset,
    })
}

#[cfg(test)]
mod tests;
