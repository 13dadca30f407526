//! Emission densities and the Hamilton filter over the memory chain.

use serde::{Deserialize, Serialize};

use super::{is_high_volatility, RegimeParams, ResidualPanel};
use crate::error::{Error, Result};
use crate::linalg::LN_2PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutput {
    pub loglik: f64,
    /// `P(state_t = j | z_1..z_t)` per year.
    pub filtered_probs: Vec<[f64; 3]>,
    /// `log f(z_t | z_1..z_{t-1})` per year (unweighted).
    pub log_densities: Vec<f64>,
}

/// Residual variances of one year, by age within the group.
fn variances(params: &RegimeParams, n: usize, year: i32) -> Result<Vec<f64>> {
    (0..n).map(|i| params.sigma_e(params.age_min + i as u32, year).map(|s| s * s)).collect()
}

/// Log-densities of `z` in the low- and high-volatility states given the
/// residual variances. The high-volatility covariance `σ_H² 𝔅𝔅ᵀ + D` is
/// handled by its rank-one structure in `O(n)`.
fn state_logdensities(z: &[f64], var: &[f64], frak_b: &[f64], mu_h: f64, sigma_h: f64) -> (f64, f64) {
    let n = z.len() as f64;
    let mut log_det = 0.0;
    let mut quad_l = 0.0;
    let mut quad_h = 0.0;
    let mut s = 0.0;
    let mut br = 0.0;
    for i in 0..z.len() {
        let v = var[i];
        log_det += v.ln();
        quad_l += z[i] * z[i] / v;
        let r = z[i] - frak_b[i] * mu_h;
        quad_h += r * r / v;
        s += frak_b[i] * frak_b[i] / v;
        br += frak_b[i] * r / v;
    }
    let s2 = sigma_h * sigma_h;
    let c = 1.0 + s2 * s;
    let low = -0.5 * (n * LN_2PI + log_det + quad_l);
    let high = -0.5 * (n * LN_2PI + log_det + c.ln() + quad_h - s2 * br * br / c);
    (low, high)
}

/// Log-density of a residual vector in `state` for calendar `year`.
pub fn emission_logdensity(z: &[f64], state: usize, year: i32, params: &RegimeParams) -> Result<f64> {
    if z.len() != params.frak_b.len() {
        return Err(Error::validation(format!(
            "residual vector has {} ages, loadings have {}",
            z.len(),
            params.frak_b.len()
        )));
    }
    if state > 2 {
        return Err(Error::validation(format!("state index {state} out of range")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite residual"));
    }
    let var = variances(params, z.len(), year)?;
    let (low, high) = state_logdensities(z, &var, &params.frak_b, params.mu_h, params.sigma_h);
    Ok(if is_high_volatility(state) { high } else { low })
}

fn log_sum_exp(v: &[f64; 3]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Runs the forward recursion; `keep` stores the per-year output.
pub(crate) fn run_filter(
    z: &ResidualPanel,
    params: &RegimeParams,
    nu: &[f64],
    mut keep: Option<(&mut Vec<[f64; 3]>, &mut Vec<f64>)>,
) -> Result<f64> {
    let n = z.ages.len();
    let ny = z.years.len();
    if n != params.frak_b.len() {
        return Err(Error::validation(format!("group has {n} ages, loadings have {}", params.frak_b.len())));
    }
    if nu.len() != ny {
        return Err(Error::validation("year weights do not match the residual years"));
    }
    if !(params.sigma_h > 0.0) {
        return Err(Error::Infeasible(format!("sigma_H = {} is not positive", params.sigma_h)));
    }
    let chain = params.chain().map_err(|e| Error::Infeasible(e.to_string()))?;
    let p = chain.transition_matrix();
    let log_p = p.map(|row| row.map(f64::ln));
    let mut log_xi = chain.stationary().map(f64::ln);
    let mut first = true;
    let mut var_cache: Option<(bool, Vec<f64>)> = None;
    let mut col = vec![0.0; n];
    let mut loglik = 0.0;
    for t in 0..ny {
        let year = z.years[t];
        let late = year >= params.epoch_year;
        if var_cache.as_ref().is_none_or(|c| c.0 != late) {
            var_cache = Some((late, variances(params, n, year)?));
        }
        let var = &var_cache.as_ref().unwrap().1;
        for (x, c) in col.iter_mut().enumerate() {
            *c = z.z[(x, t)];
        }
        let (low, high) = state_logdensities(&col, var, &params.frak_b, params.mu_h, params.sigma_h);
        let predicted = if first {
            first = false;
            log_xi
        } else {
            let mut pr = [f64::NEG_INFINITY; 3];
            for (j, pj) in pr.iter_mut().enumerate() {
                let terms = [log_xi[0] + log_p[0][j], log_xi[1] + log_p[1][j], log_xi[2] + log_p[2][j]];
                *pj = log_sum_exp(&terms);
            }
            pr
        };
        let joint = [predicted[0] + low, predicted[1] + high, predicted[2] + high];
        let log_f = log_sum_exp(&joint);
        if !log_f.is_finite() {
            return Err(Error::Infeasible(format!("zero filter density in year {year}")));
        }
        log_xi = joint.map(|v| v - log_f);
        loglik += nu[t] * log_f;
        if let Some((probs, dens)) = keep.as_mut() {
            let pr = log_xi.map(f64::exp);
            let s: f64 = pr.iter().sum();
            probs.push(pr.map(|v| v / s));
            dens.push(log_f);
        }
    }
    Ok(loglik)
}

/// Weighted log-likelihood `Σ_t ν_t log f(z_t | z_<t)` and filtered state
/// probabilities, starting from the stationary distribution.
pub fn filter_loglik(z: &ResidualPanel, params: &RegimeParams, nu: &[f64]) -> Result<FilterOutput> {
    let mut probs = Vec::with_capacity(z.years.len());
    let mut dens = Vec::with_capacity(z.years.len());
    let loglik = run_filter(z, params, nu, Some((&mut probs, &mut dens)))?;
    Ok(FilterOutput { loglik, filtered_probs: probs, log_densities: dens })
}
