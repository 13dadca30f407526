use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logistic old-age curve `μ_x = c·e^{γx} / (1 + c·e^{γx})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KannistoFit {
    pub c: f64,
    pub gamma: f64,
}

impl KannistoFit {
    pub fn mu(&self, age: u32) -> f64 {
        let e = self.c * (self.gamma * f64::from(age)).exp();
        e / (1.0 + e)
    }
}

/// Least-squares fit of `logit μ_x = log c + γ x` over `(age, μ)` pairs.
pub fn fit_kannisto(points: &[(u32, f64)]) -> Result<KannistoFit> {
    if points.len() < 2 {
        return Err(Error::validation("Kannisto fit needs at least two ages"));
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(age, mu) in points {
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::validation(format!("force of mortality {mu} at age {age} is outside (0, 1)")));
        }
        xs.push(f64::from(age));
        ys.push((mu / (1.0 - mu)).ln());
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let gamma = sxy / sxx;
    Ok(KannistoFit { c: (my - gamma * mx).exp(), gamma })
}

/// Ages used for the closing fit and the age the surface is extended to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Closing {
    /// Inclusive fit range; `None` uses the last ten ages of the data.
    pub fit_ages: Option<(u32, u32)>,
    pub extend_to: u32,
}

impl Default for Closing {
    fn default() -> Self {
        Self { fit_ages: None, extend_to: 120 }
    }
}

/// Extend an `ages x years` surface of `μ` starting at `age_min` up to
/// `closing.extend_to`, fitting one Kannisto curve per year. Ages inside
/// the data are kept as they are.
pub fn close_kannisto(mu: &DMatrix<f64>, age_min: u32, closing: &Closing) -> Result<(DMatrix<f64>, Vec<KannistoFit>)> {
    let na = mu.nrows();
    if na == 0 {
        return Err(Error::validation("empty mortality surface"));
    }
    let age_max = age_min + na as u32 - 1;
    let (lo, hi) = closing.fit_ages.unwrap_or((age_max.saturating_sub(9).max(age_min), age_max));
    if lo < age_min || hi > age_max || lo >= hi {
        return Err(Error::validation(format!("fit ages {lo}-{hi} not inside data ages {age_min}-{age_max}")));
    }
    let out_ages = (closing.extend_to.max(age_max) - age_min + 1) as usize;
    let mut out = DMatrix::zeros(out_ages, mu.ncols());
    let mut fits = Vec::with_capacity(mu.ncols());
    for t in 0..mu.ncols() {
        let pts: Vec<(u32, f64)> = (lo..=hi).map(|a| (a, mu[((a - age_min) as usize, t)])).collect();
        let fit = fit_kannisto(&pts)?;
        for i in 0..out_ages {
            out[(i, t)] = if i < na { mu[(i, t)] } else { fit.mu(age_min + i as u32) };
        }
        fits.push(fit);
    }
    Ok((out, fits))
}
