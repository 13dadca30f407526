//! Two-step maximum-likelihood calibration: scalar parameters and shock
//! loadings are optimized alternately by jDE.

use serde::{Deserialize, Serialize};

use super::filter::run_filter;
use super::jde::{maximize, JdeConfig};
use super::{filter_loglik, AgeGroup, FilterOutput, RegimeParams, ResidualPanel};
use crate::error::{Error, Result};
use crate::rng::child_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegimeConfig {
    pub epoch_year: i32,
    pub jde: JdeConfig,
    /// Alternation stops when the relative log-likelihood change of a round
    /// falls below this.
    pub rel_tol: f64,
    pub max_rounds: usize,
    pub min_years: usize,
    pub seed: u64,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        Self { epoch_year: 1970, jde: JdeConfig::default(), rel_tol: 1e-5, max_rounds: 20, min_years: 30, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeFit {
    pub group: AgeGroup,
    pub params: RegimeParams,
    pub loglik: f64,
    pub rounds: usize,
    pub filter: FilterOutput,
}

/// Search box for `(p12, p21, σ_e1, slope1, σ_e2, slope2, μ_H, σ_H)`.
pub const SCALAR_LOWER: [f64; 8] = [1e-4, 1e-4, 1e-4, -0.02, 1e-4, -0.02, -1.0, 1e-3];
pub const SCALAR_UPPER: [f64; 8] = [0.999, 0.999, 5.0, 0.02, 5.0, 0.02, 1.0, 10.0];

fn with_scalars(base: &RegimeParams, v: &[f64]) -> RegimeParams {
    RegimeParams {
        p12: v[0],
        p21: v[1],
        sigma_e1: v[2],
        slope1: v[3],
        sigma_e2: v[4],
        slope2: v[5],
        mu_h: v[6],
        sigma_h: v[7],
        ..base.clone()
    }
}

fn scalars(p: &RegimeParams) -> Vec<f64> {
    vec![p.p12, p.p21, p.sigma_e1, p.slope1, p.sigma_e2, p.slope2, p.mu_h, p.sigma_h]
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

fn robust_sd(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.1;
    }
    values.sort_by(f64::total_cmp);
    let med = values[values.len() / 2];
    let mut dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    (1.4826 * dev[dev.len() / 2]).max(1e-3)
}

/// Calibrate the regime model for one age group of `z`.
pub fn fit_regime(z: &ResidualPanel, group: &AgeGroup, nu: &[f64], config: &RegimeConfig) -> Result<RegimeFit> {
    let gz = z.group(group)?;
    let (n, ny) = (gz.ages.len(), gz.years.len());
    if ny < config.min_years {
        return Err(Error::validation(format!("{ny} years of residuals; at least {} required", config.min_years)));
    }
    if nu.len() != ny {
        return Err(Error::validation("year weights do not match the residual years"));
    }
    let mut early: Vec<f64> = Vec::new();
    let mut late: Vec<f64> = Vec::new();
    for (t, &y) in gz.years.iter().enumerate() {
        let target = if y < config.epoch_year { &mut early } else { &mut late };
        target.extend(gz.z.column(t).iter());
    }
    let (sd1, sd2) = (robust_sd(&mut early), robust_sd(&mut late));
    let mut params = RegimeParams {
        p12: 0.05,
        p21: 0.3,
        sigma_e1: sd1.clamp(SCALAR_LOWER[2], SCALAR_UPPER[2]),
        slope1: 0.0,
        sigma_e2: sd2.clamp(SCALAR_LOWER[4], SCALAR_UPPER[4]),
        slope2: 0.0,
        mu_h: 0.0,
        sigma_h: 0.5,
        frak_b: vec![1.0 / (n as f64).sqrt(); n],
        epoch_year: config.epoch_year,
        age_min: group.age_min,
    };
    let loglik_of = |p: &RegimeParams| run_filter(&gz, p, nu, None).unwrap_or(f64::NEG_INFINITY);

    let mut prev = loglik_of(&params);
    let mut rounds = 0;
    for round in 1..=config.max_rounds.max(1) {
        rounds = round;
        let jde1 = JdeConfig { seed: child_seed(config.seed, 2 * round as u64), ..config.jde.clone() };
        let fixed = params.clone();
        let step1 = maximize(
            |v| loglik_of(&with_scalars(&fixed, v)),
            &SCALAR_LOWER,
            &SCALAR_UPPER,
            &[scalars(&params)],
            &jde1,
        )?;
        params = with_scalars(&params, &step1.best);

        let jde2 = JdeConfig { seed: child_seed(config.seed, 2 * round as u64 + 1), ..config.jde.clone() };
        let fixed = params.clone();
        let step2 = maximize(
            |v| match unit(v) {
                Some(b) => loglik_of(&RegimeParams { frak_b: b, ..fixed.clone() }),
                None => f64::NEG_INFINITY,
            },
            &vec![-1.0; n],
            &vec![1.0; n],
            &[params.frak_b.clone()],
            &jde2,
        )?;
        let mut b = unit(&step2.best).ok_or_else(|| Error::numerical("shock loadings collapsed to zero"))?;
        if b.iter().sum::<f64>() < 0.0 {
            b.iter_mut().for_each(|v| *v = -*v);
            params.mu_h = -params.mu_h;
        }
        params.frak_b = b;
        let ll = loglik_of(&params);
        let rel = (ll - prev).abs() / ll.abs().max(1e-300);
        prev = ll;
        if round > 1 && rel < config.rel_tol {
            break;
        }
    }
    let filter = filter_loglik(&gz, &params, nu)?;
    Ok(RegimeFit { group: group.clone(), loglik: filter.loglik, params, rounds, filter })
}
