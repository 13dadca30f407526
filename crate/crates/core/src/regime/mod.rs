//! Regime-switching shock model on baseline residuals.
//!
//! Residual vectors of an age group follow a hidden three-state chain
//! `{(X,1), (1,2), (2,2)}`: a low-volatility state and a high-volatility
//! state split by memory so that every high-volatility spell lasts at least
//! two years. In the high-volatility states the residuals get an extra
//! common shock `𝔅·Y`, `Y ~ N(μ_H, σ_H²)`.

mod filter;
mod fit;
pub mod jde;

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baseline::BaselineParams;
use crate::data::CountrySeries;
use crate::error::{Error, Result};

pub use filter::{emission_logdensity, filter_loglik, FilterOutput};
pub use fit::{fit_regime, RegimeConfig, RegimeFit, SCALAR_LOWER, SCALAR_UPPER};

/// Index of the low-volatility state `(X,1)`.
pub const LVS: usize = 0;
/// High-volatility state entered from the low-volatility state, `(1,2)`.
pub const HVS_ENTRY: usize = 1;
/// High-volatility state continued, `(2,2)`.
pub const HVS_CONT: usize = 2;

pub fn is_high_volatility(state: usize) -> bool {
    state != LVS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeGroup {
    pub name: String,
    pub age_min: u32,
    pub age_max: u32,
}

impl AgeGroup {
    pub fn new(age_min: u32, age_max: u32) -> Self {
        Self { name: format!("{age_min}-{age_max}"), age_min, age_max }
    }

    pub fn len(&self) -> usize {
        (self.age_max - self.age_min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.age_max < self.age_min
    }
}

/// Baseline residuals `z[x,t]` for `t > t_min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPanel {
    pub ages: Vec<u32>,
    pub years: Vec<i32>,
    /// Ages x years.
    pub z: DMatrix<f64>,
}

impl ResidualPanel {
    /// Rows belonging to `group`.
    pub fn group(&self, group: &AgeGroup) -> Result<ResidualPanel> {
        let rows: Vec<usize> = (0..self.ages.len())
            .filter(|&i| self.ages[i] >= group.age_min && self.ages[i] <= group.age_max)
            .collect();
        if rows.len() != group.len() {
            return Err(Error::validation(format!("age group {} is not covered by the residual panel", group.name)));
        }
        Ok(ResidualPanel {
            ages: rows.iter().map(|&i| self.ages[i]).collect(),
            years: self.years.clone(),
            z: DMatrix::from_fn(rows.len(), self.years.len(), |i, t| self.z[(rows[i], t)]),
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("year");
        for a in &self.ages {
            out.push_str(&format!(",{a}"));
        }
        out.push('\n');
        for (t, y) in self.years.iter().enumerate() {
            out.push_str(&y.to_string());
            for x in 0..self.ages.len() {
                out.push_str(&format!(",{:?}", self.z[(x, t)]));
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// `z[x,t] = log m̂[x,t] − log m̂[x,t−1] − η̂[x,t]` with `η̂` the fitted
/// improvement predictor of the target country.
pub fn compute_residuals(series: &CountrySeries, baseline: &BaselineParams) -> Result<ResidualPanel> {
    let w = series.window;
    if w != *baseline.window() {
        return Err(Error::validation("series and baseline cover different windows"));
    }
    let rates = series.crude_rates()?;
    let ages: Vec<u32> = w.ages().collect();
    let years: Vec<i32> = w.years().collect();
    for t in 0..years.len() {
        for x in 0..ages.len() {
            if !series.present[(x, t)] || !(rates[(x, t)] > 0.0) {
                return Err(Error::validation(format!(
                    "crude rate at (year {}, age {}) is zero or missing; residual undefined",
                    years[t], ages[x]
                )));
            }
        }
    }
    let eta = baseline.improvement_predictor();
    let z = DMatrix::from_fn(ages.len(), years.len() - 1, |x, t| {
        rates[(x, t + 1)].ln() - rates[(x, t)].ln() - eta[(x, t)]
    });
    Ok(ResidualPanel { ages, years: years[1..].to_vec(), z })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub p12: f64,
    pub p21: f64,
    pub sigma_e1: f64,
    pub slope1: f64,
    pub sigma_e2: f64,
    pub slope2: f64,
    pub mu_h: f64,
    pub sigma_h: f64,
    /// Unit-norm shock loadings over the ages of the group.
    pub frak_b: Vec<f64>,
    /// First year governed by `(sigma_e2, slope2)`.
    pub epoch_year: i32,
    /// Youngest age of the group; the volatility slopes start here.
    pub age_min: u32,
}

impl RegimeParams {
    /// Residual volatility `σ_e(x, t)`; non-positive values are an error.
    pub fn sigma_e(&self, age: u32, year: i32) -> Result<f64> {
        let v = self.sigma_e_raw(age, year);
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Infeasible(format!("sigma_e({age}, {year}) = {v} is not positive")))
        }
    }

    pub(crate) fn sigma_e_raw(&self, age: u32, year: i32) -> f64 {
        let dx = f64::from(age) - f64::from(self.age_min);
        if year < self.epoch_year {
            self.sigma_e1 + self.slope1 * dx
        } else {
            self.sigma_e2 + self.slope2 * dx
        }
    }

    pub fn chain(&self) -> Result<MemoryChain> {
        MemoryChain::new(self.p12, self.p21)
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

    /// `age,frak_b` table.
    pub fn write_loadings_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("age,frak_b\n");
        for (i, b) in self.frak_b.iter().enumerate() {
            out.push_str(&format!("{},{b:?}\n", self.age_min + i as u32));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Transition structure of the three-state chain with memory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryChain {
    pub p12: f64,
    pub p21: f64,
}

impl MemoryChain {
    pub fn new(p12: f64, p21: f64) -> Result<Self> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(p12) || !ok(p21) || p12 + p21 == 0.0 {
            return Err(Error::validation(format!("transition probabilities ({p12}, {p21}) are not usable")));
        }
        Ok(Self { p12, p21 })
    }

    /// Row-stochastic transition matrix over `(X,1), (1,2), (2,2)`.
    pub fn transition_matrix(&self) -> [[f64; 3]; 3] {
        [[1.0 - self.p12, self.p12, 0.0], [0.0, 0.0, 1.0], [self.p21, 0.0, 1.0 - self.p21]]
    }

    /// Stationary distribution `(p21, p12·p21, p12) / (p12 + p21 + p12·p21)`.
    pub fn stationary(&self) -> [f64; 3] {
        let (a, b) = (self.p12, self.p21);
        let s = a + b + a * b;
        [b / s, a * b / s, a / s]
    }
}

/// Per-year likelihood weights from `(first_year, last_year, weight)` ranges;
/// years not covered get weight 1.
pub fn year_weights(years: &[i32], ranges: &[(i32, i32, f64)]) -> Result<Vec<f64>> {
    for &(a, b, w) in ranges {
        if b < a || !(w >= 0.0) || !w.is_finite() {
            return Err(Error::validation(format!("invalid weight range {a}-{b} with weight {w}")));
        }
    }
    Ok(years
        .iter()
        .map(|&y| ranges.iter().rev().find(|(a, b, _)| y >= *a && y <= *b).map_or(1.0, |r| r.2))
        .collect())
}
