use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::chain::MarkovPath;
use crate::error::Result;
use crate::regime::{is_high_volatility, RegimeParams};

/// Mean of the projected common shock `Y`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShockMean {
    #[default]
    Zero,
    /// Use the calibrated `μ_H`.
    Calibrated,
}

/// A maximal run of high-volatility projection years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HvsRun {
    /// Index of the first projection year of the run.
    pub start: usize,
    pub len: usize,
    /// The run continues a high-volatility spell from the observed data.
    pub continues_history: bool,
    /// The run is cut by the end of the horizon.
    pub truncated: bool,
}

impl HvsRun {
    /// Whether the offsetting constraint applies within the projection
    /// (single-year runs cut by the horizon keep their draw).
    pub fn is_offset(&self) -> bool {
        !(self.truncated && self.len == 1 && !self.continues_history)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockPanel {
    /// Ages of the group x projection years.
    pub shocks: DMatrix<f64>,
    pub runs: Vec<HvsRun>,
}

impl ShockPanel {
    /// A single-year run at the horizon end kept its un-offset draw.
    pub fn has_unoffset_run(&self) -> bool {
        self.runs.iter().any(|r| !r.is_offset())
    }
}

/// Maximal high-volatility runs of a path.
pub fn hvs_runs(path: &MarkovPath) -> Vec<HvsRun> {
    let n = path.states.len();
    let mut runs = Vec::new();
    let mut t = 0;
    while t < n {
        if !is_high_volatility(path.states[t]) {
            t += 1;
            continue;
        }
        let start = t;
        while t < n && is_high_volatility(path.states[t]) {
            t += 1;
        }
        runs.push(HvsRun {
            start,
            len: t - start,
            continues_history: start == 0 && is_high_volatility(path.start_state),
            truncated: t == n,
        });
    }
    runs
}

/// Draw one high-volatility residual vector `𝔅·Y + ε` for `year`.
fn draw_vector<R: Rng>(params: &RegimeParams, mean: f64, year: i32, r: &mut R) -> Result<Vec<f64>> {
    let y = mean + params.sigma_h * r.sample::<f64, _>(StandardNormal);
    params
        .frak_b
        .iter()
        .enumerate()
        .map(|(x, b)| {
            let sd = params.sigma_e(params.age_min + x as u32, year)?;
            Ok(b * y + sd * r.sample::<f64, _>(StandardNormal))
        })
        .collect()
}

/// Offset-constrained shocks for the high-volatility runs of `path`.
///
/// A run of `n` years gets `n − 1` drawn vectors and a final vector equal to
/// minus their sum, after which the vector with the largest age average is
/// moved to the front. A run continuing an observed spell instead offsets
/// `carry` (the summed observed residuals of that spell) as well and keeps
/// its chronological order. A single-year run cut by the horizon keeps its
/// draw.
pub fn simulate_shock_panel<R: Rng>(
    path: &MarkovPath,
    params: &RegimeParams,
    carry: Option<&[f64]>,
    shock_mean: ShockMean,
    r: &mut R,
) -> Result<ShockPanel> {
    let n = params.frak_b.len();
    let mean = match shock_mean {
        ShockMean::Zero => 0.0,
        ShockMean::Calibrated => params.mu_h,
    };
    let mut shocks = DMatrix::zeros(n, path.states.len());
    let runs = hvs_runs(path);
    for run in &runs {
        let year = |k: usize| path.first_year + (run.start + k) as i32;
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(run.len);
        if !run.is_offset() {
            vectors.push(draw_vector(params, mean, year(0), r)?);
        } else {
            for k in 0..run.len - 1 {
                vectors.push(draw_vector(params, mean, year(k), r)?);
            }
            let mut last: Vec<f64> = (0..n).map(|x| -vectors.iter().map(|v| v[x]).sum::<f64>()).collect();
            if run.continues_history {
                if let Some(c) = carry {
                    for (l, c) in last.iter_mut().zip(c) {
                        *l -= c;
                    }
                }
            }
            vectors.push(last);
            if !run.continues_history {
                let avg = |v: &Vec<f64>| v.iter().sum::<f64>() / n as f64;
                let top = (0..vectors.len()).fold(0, |b, i| if avg(&vectors[i]) > avg(&vectors[b]) { i } else { b });
                let v = vectors.remove(top);
                vectors.insert(0, v);
            }
        }
        for (k, v) in vectors.iter().enumerate() {
            for x in 0..n {
                shocks[(x, run.start + k)] = v[x];
            }
        }
    }
    Ok(ShockPanel { shocks, runs })
}
