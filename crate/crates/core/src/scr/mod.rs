//! Contract valuation and capital requirements: best-estimate liabilities
//! of immediate annuities and term life policies, standard-formula shocks
//! and the run-off 99.5% VaR over simulated scenarios.

mod kannisto;

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use kannisto::{close_kannisto, fit_kannisto, Closing, KannistoFit};

use crate::error::{Error, Result};
use crate::par;
use crate::projection::ScenarioSet;

/// Fewest scenarios accepted by the run-off quantile.
pub const MIN_RUNOFF_SCENARIOS: usize = 1000;
/// Standard-formula longevity shock factor.
pub const LONGEVITY_FACTOR: f64 = 0.8;
pub const MORTALITY_FACTOR: f64 = 1.15;
/// Catastrophe add-on to the first-year rates.
pub const CATASTROPHE_ADDON: f64 = 0.0015;

/// One-year death probabilities over ages and calendar years.
#[derive(Debug, Clone, PartialEq)]
pub struct MortalitySurface {
    pub age_min: u32,
    pub year_min: i32,
    /// Ages x years.
    pub q: DMatrix<f64>,
}

impl MortalitySurface {
    pub fn new(age_min: u32, year_min: i32, q: DMatrix<f64>) -> Result<Self> {
        if let Some(v) = q.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(format!("death probability {v} outside [0, 1]")));
        }
        Ok(Self { age_min, year_min, q })
    }

    /// `q = 1 − e^{−μ}` after Kannisto closing of `μ`.
    pub fn from_mu(age_min: u32, year_min: i32, mu: &DMatrix<f64>, closing: &Closing) -> Result<Self> {
        let (closed, _) = close_kannisto(mu, age_min, closing)?;
        Self::new(age_min, year_min, closed.map(|m| -(-m).exp_m1()))
    }

    /// Surface of one scenario path, starting at the anchor year.
    pub fn from_scenario(set: &ScenarioSet, path: usize, closing: &Closing) -> Result<Self> {
        Self::from_mu(set.age_min, set.first_year - 1, &set.mu_surface(path), closing)
    }

    pub fn q_at(&self, age: u32, year: i32) -> Result<f64> {
        let (i, j) = (age.checked_sub(self.age_min), year.checked_sub(self.year_min));
        match (i, j) {
            (Some(i), Some(j)) if (i as usize) < self.q.nrows() && j >= 0 && (j as usize) < self.q.ncols() => {
                Ok(self.q[(i as usize, j as usize)])
            }
            _ => Err(Error::validation(format!("mortality surface does not cover age {age} in {year}"))),
        }
    }

    /// Rates along the diagonal from `(age, year)` for `n` years.
    pub fn diagonal(&self, age: u32, year: i32, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|j| self.q_at(age + j as u32, year + j as i32)).collect()
    }

    fn map(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let q = DMatrix::from_fn(self.q.nrows(), self.q.ncols(), |x, t| f(t, self.q[(x, t)]).min(1.0));
        Self { q, ..*self }
    }
}

/// `ₖp` for `k = 0..=q.len()` along a diagonal of death probabilities.
pub fn survival_from_diagonal(q: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(q.len() + 1);
    let mut p = 1.0;
    out.push(p);
    for qj in q {
        p *= 1.0 - qj;
        out.push(p);
    }
    out
}

/// Survival probabilities `ₖp_{x,start}` for `k = 0..=n`.
pub fn survival_curve(surface: &MortalitySurface, age: u32, start_year: i32, n: usize) -> Result<Vec<f64>> {
    Ok(survival_from_diagonal(&surface.diagonal(age, start_year, n)?))
}

/// Immediate life annuity paying at the end of each year survived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnuityContract {
    pub issue_age: u32,
    pub issue_year: i32,
    pub payout: f64,
    pub max_age: u32,
    pub interest: f64,
}

impl Default for AnnuityContract {
    fn default() -> Self {
        Self { issue_age: 65, issue_year: 2021, payout: 10_000.0, max_age: 120, interest: 0.02 }
    }
}

/// Term insurance paying the benefit at the end of the year of death.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TermLifeContract {
    pub issue_age: u32,
    pub issue_year: i32,
    pub terminal_age: u32,
    pub benefit: f64,
    pub interest: f64,
}

impl Default for TermLifeContract {
    fn default() -> Self {
        Self { issue_age: 40, issue_year: 2021, terminal_age: 65, benefit: 150_000.0, interest: 0.02 }
    }
}

pub trait Contract: Sync {
    /// Years of cover.
    fn term(&self) -> usize;
    fn issue_age(&self) -> u32;
    fn issue_year(&self) -> i32;
    /// Present value given the death probabilities along the diagonal.
    fn value_diagonal(&self, q: &[f64]) -> f64;

    fn bel(&self, surface: &MortalitySurface) -> Result<f64> {
        Ok(self.value_diagonal(&surface.diagonal(self.issue_age(), self.issue_year(), self.term())?))
    }
}

fn check_interest(i: f64) -> Result<()> {
    if i > -1.0 && i.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(format!("interest rate {i} must exceed -1")))
    }
}

impl AnnuityContract {
    pub fn validate(&self) -> Result<()> {
        if self.issue_age >= self.max_age {
            return Err(Error::validation(format!("issue age {} not below {}", self.issue_age, self.max_age)));
        }
        check_interest(self.interest)
    }
}

impl TermLifeContract {
    pub fn validate(&self) -> Result<()> {
        if self.issue_age >= self.terminal_age {
            return Err(Error::validation(format!("issue age {} not below {}", self.issue_age, self.terminal_age)));
        }
        check_interest(self.interest)
    }
}

impl Contract for AnnuityContract {
    fn term(&self) -> usize {
        (self.max_age - self.issue_age) as usize
    }
    fn issue_age(&self) -> u32 {
        self.issue_age
    }
    fn issue_year(&self) -> i32 {
        self.issue_year
    }
    fn value_diagonal(&self, q: &[f64]) -> f64 {
        let v = 1.0 / (1.0 + self.interest);
        let p = survival_from_diagonal(q);
        let mut disc = 1.0;
        let mut total = 0.0;
        for pk in &p[1..] {
            disc *= v;
            total += disc * pk;
        }
        self.payout * total
    }
}

impl Contract for TermLifeContract {
    fn term(&self) -> usize {
        (self.terminal_age - self.issue_age) as usize
    }
    fn issue_age(&self) -> u32 {
        self.issue_age
    }
    fn issue_year(&self) -> i32 {
        self.issue_year
    }
    fn value_diagonal(&self, q: &[f64]) -> f64 {
        let v = 1.0 / (1.0 + self.interest);
        let p = survival_from_diagonal(q);
        let mut disc = 1.0;
        let mut total = 0.0;
        for (k, qk) in q.iter().enumerate() {
            disc *= v;
            total += disc * p[k] * qk;
        }
        self.benefit * total
    }
}

/// Root-sum-of-squares aggregation of two sub-module SCRs.
pub fn aggregate_sqrt(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

/// Standard-formula SCR of an annuity: permanent 20% cut in all rates.
pub fn scr_standard_annuity(contract: &AnnuityContract, best: &MortalitySurface) -> Result<f64> {
    let bel0 = contract.bel(best)?;
    let shocked = contract.bel(&best.map(|_, q| LONGEVITY_FACTOR * q))?;
    Ok((shocked - bel0).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardTermScr {
    pub mortality: f64,
    pub catastrophe: f64,
    pub total: f64,
}

/// Standard-formula SCR of term life: a permanent 15% rise in all rates
/// and a first-year catastrophe add-on, aggregated by root-sum-of-squares.
pub fn scr_standard_term(contract: &TermLifeContract, best: &MortalitySurface) -> Result<StandardTermScr> {
    let bel0 = contract.bel(best)?;
    let mortality = (contract.bel(&best.map(|_, q| MORTALITY_FACTOR * q))? - bel0).max(0.0);
    let cat_col = contract
        .issue_year
        .checked_sub(best.year_min)
        .filter(|j| *j >= 0)
        .ok_or_else(|| Error::validation("surface starts after the issue year"))? as usize;
    let cat = best.map(|t, q| if t == cat_col { q + CATASTROPHE_ADDON } else { q });
    let catastrophe = (contract.bel(&cat)? - bel0).max(0.0);
    Ok(StandardTermScr { mortality, catastrophe, total: aggregate_sqrt(mortality, catastrophe) })
}

/// Empirical 99.5% quantile: the `⌈0.995 n⌉`-th smallest liability.
pub fn var_995(liabilities: &[f64]) -> Result<f64> {
    if liabilities.len() < MIN_RUNOFF_SCENARIOS {
        return Err(Error::validation(format!(
            "run-off VaR needs at least {MIN_RUNOFF_SCENARIOS} scenarios, got {}",
            liabilities.len()
        )));
    }
    let mut v = liabilities.to_vec();
    v.sort_by(f64::total_cmp);
    let k = (0.995 * v.len() as f64).ceil() as usize;
    Ok(v[k - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunoffScr {
    pub bel0: f64,
    pub var: f64,
    pub scr: f64,
}

/// Liability of `contract` under every scenario path, in path order.
pub fn scenario_liabilities<C: Contract>(contract: &C, scenarios: &ScenarioSet, closing: &Closing) -> Result<Vec<f64>> {
    par::map_indexed(scenarios.n_paths, |p| {
        contract.bel(&MortalitySurface::from_scenario(scenarios, p, closing)?)
    })
    .into_iter()
    .collect()
}

/// Run-off SCR: 99.5% VaR of the scenario liabilities minus the BEL.
pub fn scr_runoff<C: Contract>(
    contract: &C,
    scenarios: &ScenarioSet,
    best: &MortalitySurface,
    closing: &Closing,
) -> Result<RunoffScr> {
    let bel0 = contract.bel(best)?;
    let var = var_995(&scenario_liabilities(contract, scenarios, closing)?)?;
    Ok(RunoffScr { bel0, var, scr: var - bel0 })
}

/// One line of the SCR report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScrRow {
    pub product: String,
    pub issue_age: u32,
    pub bel0: f64,
    pub scr_standard: f64,
    pub scr_runoff: f64,
    /// Term life sub-modules; zero for annuities.
    pub scr_mortality: f64,
    pub scr_catastrophe: f64,
}

pub fn write_report_csv(rows: &[ScrRow], path: &Path) -> Result<()> {
    let mut out = String::from("product,age,bel0,scr_standard,scr_runoff,scr_mortality,scr_catastrophe\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.product, r.issue_age, r.bel0, r.scr_standard, r.scr_runoff, r.scr_mortality, r.scr_catastrophe
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
