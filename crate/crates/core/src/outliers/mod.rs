//! Shock-year detection on the common period effects.
//!
//! Each period-effect series is detrended with a smoothing spline (fitted
//! without a priori shock years); the remainders are split into epochs and
//! years whose robust Mahalanobis distance exceeds `√χ²_{m,q}` are flagged.

mod mcd;
mod spline;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

pub use mcd::{fast_mcd, mahalanobis, subset_size, McdConfig, McdEstimate};
pub use spline::{fit_spline_gcv, fit_spline_with_lambda, SplineFit, GCV_GRID_SIZE, GCV_LAMBDA_MAX, GCV_LAMBDA_MIN};

/// Years removed from spline fitting by default (major historical shocks).
pub const DEFAULT_PRIOR_EXCLUSIONS: &[i32] = &[
    1854, 1855, 1856, 1859, 1866, 1870, 1871, 1889, 1890, 1891, 1892, 1914, 1915, 1916, 1917, 1918, 1919, 1940,
    1941, 1942, 1943, 1944, 1945, 2020, 2021,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutlierConfig {
    pub quantile: f64,
    /// First year of the second epoch; `None` treats the series as one epoch.
    pub epoch_split_year: Option<i32>,
    pub prior_exclusions: Vec<i32>,
    pub mcd: McdConfig,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        Self {
            quantile: 0.99,
            epoch_split_year: Some(1970),
            prior_exclusions: DEFAULT_PRIOR_EXCLUSIONS.to_vec(),
            mcd: McdConfig::default(),
        }
    }
}

/// Smoothing spline through `values` (indexed by `years`), ignoring the
/// excluded years.
pub fn fit_smoothing_spline(years: &[i32], values: &[f64], exclude_years: &BTreeSet<i32>) -> Result<SplineFit> {
    if years.len() != values.len() {
        return Err(Error::validation("years and values differ in length"));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = years
        .iter()
        .zip(values)
        .filter(|(yr, _)| !exclude_years.contains(yr))
        .map(|(yr, v)| (f64::from(*yr), *v))
        .unzip();
    if x.len() < 10 {
        return Err(Error::validation(format!("{} non-excluded points; a spline fit needs at least 10", x.len())));
    }
    fit_spline_gcv(&x, &y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderSeries {
    pub years: Vec<i32>,
    /// `R_i[t] = L_i[t] − f_i(t)`, one series per factor.
    pub remainders: Vec<Vec<f64>>,
    /// Spline values `f_i(t)`.
    pub trend: Vec<Vec<f64>>,
    pub epoch_split_year: Option<i32>,
}

impl RemainderSeries {
    pub fn epoch_of(&self, year: i32) -> usize {
        match self.epoch_split_year {
            Some(s) if year >= s => 1,
            _ => 0,
        }
    }
}

pub fn compute_remainders(
    years: &[i32],
    series: &[Vec<f64>],
    splines: &[SplineFit],
    epoch_split_year: Option<i32>,
) -> Result<RemainderSeries> {
    if series.len() != splines.len() || series.iter().any(|s| s.len() != years.len()) {
        return Err(Error::validation("series, splines and years do not line up"));
    }
    let trend: Vec<Vec<f64>> =
        splines.iter().map(|s| years.iter().map(|y| s.evaluate(f64::from(*y))).collect()).collect();
    let remainders = series
        .iter()
        .zip(&trend)
        .map(|(l, f)| l.iter().zip(f).map(|(a, b)| a - b).collect())
        .collect();
    Ok(RemainderSeries { years: years.to_vec(), remainders, trend, epoch_split_year })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochEstimate {
    pub epoch: usize,
    pub first_year: i32,
    pub last_year: i32,
    pub location: DVector<f64>,
    pub scatter: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub years: Vec<i32>,
    pub distances: Vec<f64>,
    pub epochs: Vec<usize>,
    pub threshold: f64,
    pub outlier_years: BTreeSet<i32>,
    pub estimates: Vec<EpochEstimate>,
}

impl OutlierReport {
    /// Consecutive flagged years grouped into `(first, last)` runs.
    pub fn runs(&self) -> Vec<(i32, i32)> {
        let mut runs: Vec<(i32, i32)> = Vec::new();
        for &y in &self.outlier_years {
            match runs.last_mut() {
                Some(last) if last.1 + 1 == y => last.1 = y,
                _ => runs.push((y, y)),
            }
        }
        runs
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("year,distance,epoch,flagged\n");
        for ((y, d), e) in self.years.iter().zip(&self.distances).zip(&self.epochs) {
            out.push_str(&format!("{y},{d:?},{e},{}\n", self.outlier_years.contains(y)));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn write_years_json(&self, path: &Path) -> Result<()> {
        let years: Vec<i32> = self.outlier_years.iter().copied().collect();
        let json = serde_json::to_string_pretty(&years).map_err(|e| Error::validation(e.to_string()))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

/// Read a year list written by [`OutlierReport::write_years_json`].
pub fn read_years_json(path: &Path) -> Result<BTreeSet<i32>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let years: Vec<i32> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    Ok(years.into_iter().collect())
}

/// `√χ²_{m,q}`
pub fn chi_threshold(m: usize, quantile: f64) -> Result<f64> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::validation(format!("quantile {quantile} outside (0, 1)")));
    }
    let chi = ChiSquared::new(m as f64).map_err(|e| Error::validation(e.to_string()))?;
    Ok(chi.inverse_cdf(quantile).sqrt())
}

/// Flag remainder vectors whose robust distance within their epoch exceeds
/// `√χ²_{m,quantile}`. Empty epochs are skipped.
pub fn detect_outliers(remainders: &RemainderSeries, quantile: f64, mcd: &McdConfig) -> Result<OutlierReport> {
    let m = remainders.remainders.len();
    if m == 0 {
        return Err(Error::validation("no remainder series"));
    }
    let threshold = chi_threshold(m, quantile)?;
    let n = remainders.years.len();
    let epochs: Vec<usize> = remainders.years.iter().map(|&y| remainders.epoch_of(y)).collect();
    let mut distances = vec![0.0; n];
    let mut estimates = Vec::new();
    for epoch in 0..2 {
        let idx: Vec<usize> = (0..n).filter(|&i| epochs[i] == epoch).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < m + 2 {
            return Err(Error::validation(format!(
                "epoch {epoch} has {} years; at least {} are needed",
                idx.len(),
                m + 2
            )));
        }
        let points = DMatrix::from_fn(idx.len(), m, |i, j| remainders.remainders[j][idx[i]]);
        let est = fast_mcd(&points, mcd)?;
        for (i, d) in est.distances(&points)?.into_iter().enumerate() {
            distances[idx[i]] = d;
        }
        estimates.push(EpochEstimate {
            epoch,
            first_year: remainders.years[idx[0]],
            last_year: remainders.years[*idx.last().unwrap()],
            location: est.location,
            scatter: est.scatter,
        });
    }
    let outlier_years = remainders
        .years
        .iter()
        .zip(&distances)
        .filter(|(_, d)| **d > threshold)
        .map(|(y, _)| *y)
        .collect();
    Ok(OutlierReport { years: remainders.years.clone(), distances, epochs, threshold, outlier_years, estimates })
}

/// Spline-detrend each series and run [`detect_outliers`] on the remainders.
pub fn detect_from_period_effects(
    years: &[i32],
    series: &[Vec<f64>],
    config: &OutlierConfig,
) -> Result<(Vec<SplineFit>, RemainderSeries, OutlierReport)> {
    let exclude: BTreeSet<i32> = config.prior_exclusions.iter().copied().collect();
    let splines = series.iter().map(|s| fit_smoothing_spline(years, s, &exclude)).collect::<Result<Vec<_>>>()?;
    let rem = compute_remainders(years, series, &splines, config.epoch_split_year)?;
    let report = detect_outliers(&rem, config.quantile, &config.mcd)?;
    Ok((splines, rem, report))
}
