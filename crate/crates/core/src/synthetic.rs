//! Seeded synthetic data for tests, benchmarks and demonstration runs.
//!
//! Death counts are generated from a known two-factor surface so that fits
//! can be checked against the generating parameters.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

use crate::baseline::{CommonTrendParams, CountryDeviationParams};
use crate::data::{CountrySeries, Window};
use crate::error::{Error, Result};
use crate::outliers::RemainderSeries;
use crate::regime::{RegimeParams, ResidualPanel};
use crate::rng;

/// Generating parameters behind a synthetic panel.
#[derive(Debug, Clone)]
pub struct BaselineTruth {
    pub common: CommonTrendParams,
    pub deviations: BTreeMap<String, CountryDeviationParams>,
    /// Log death rate at the first year, per country.
    pub anchors: BTreeMap<String, DVector<f64>>,
}

impl BaselineTruth {
    /// Log-rate surface `η` of one country.
    pub fn country_eta(&self, code: &str) -> DMatrix<f64> {
        let w = self.common.window;
        let mut eta = self.common.surface();
        if let Some(dev) = self.deviations.get(code) {
            eta += dev.surface(w.n_ages(), w.n_years());
        }
        let anchor = &self.anchors[code];
        for mut col in eta.column_iter_mut() {
            col += anchor;
        }
        eta
    }
}

#[derive(Debug, Clone)]
pub struct FixtureConfig {
    pub window: Window,
    /// Country code and exposure per cell.
    pub countries: Vec<(String, f64)>,
    /// Common period shocks: year and size added to `K_1` in that year and
    /// subtracted the next, producing a one-year spike in mortality.
    pub shocks: Vec<(i32, f64)>,
    /// Sd of the common period innovations.
    pub period_sd: f64,
    /// Sd of the country deviation innovations (zero disables deviations).
    pub deviation_sd: f64,
    /// Poisson-sample deaths; otherwise deaths equal their expectation.
    pub poisson: bool,
    pub seed: u64,
}

impl FixtureConfig {
    /// Three countries, ages 60-69, years 1980-2019 with two common shocks.
    pub fn three_country(seed: u64) -> Self {
        Self {
            window: Window { age_min: 60, age_max: 69, year_min: 1980, year_max: 2019 },
            countries: vec![("AAA".into(), 2.0e5), ("BBB".into(), 1.0e5), ("CCC".into(), 5.0e4)],
            shocks: vec![(1992, 0.25), (2008, 0.3)],
            period_sd: 0.03,
            deviation_sd: 0.01,
            poisson: true,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PanelFixture {
    pub countries: Vec<CountrySeries>,
    pub entry_years: BTreeMap<String, i32>,
    pub truth: BaselineTruth,
}

fn unit(v: DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    v / n
}

/// Build a panel fixture; see [`FixtureConfig`].
pub fn panel_fixture(cfg: &FixtureConfig) -> Result<PanelFixture> {
    let w = cfg.window;
    let (na, ny) = (w.n_ages(), w.n_years());
    if na < 2 || ny < 3 || cfg.countries.is_empty() {
        return Err(Error::validation("fixture needs at least 2 ages, 3 years and one country"));
    }
    let mut r = rng::stream(cfg.seed, 0);
    let frac = |x: usize| x as f64 / (na - 1) as f64;
    let a = DVector::from_fn(na, |x, _| -0.025 + 0.012 * frac(x));
    let b1 = unit(DVector::from_fn(na, |x, _| 1.2 - 0.7 * frac(x)));
    let b2 = unit(DVector::from_fn(na, |x, _| (std::f64::consts::PI * frac(x)).cos()));
    let noise = Normal::new(0.0, cfg.period_sd.max(0.0)).map_err(|e| Error::validation(e.to_string()))?;
    let mut k1: Vec<f64> = (1..ny).map(|_| noise.sample(&mut r)).collect();
    let k2: Vec<f64> = (1..ny).map(|_| 0.6 * noise.sample(&mut r)).collect();
    for &(year, size) in &cfg.shocks {
        if year > w.year_min && year < w.year_max {
            let j = w.year_index(year);
            k1[j - 1] += size;
            k1[j] -= size;
        }
    }
    let cum = |k: &[f64]| DVector::from_vec(crate::baseline::cumulate(k));
    let common = CommonTrendParams { window: w, a, b: vec![b1, b2], l: vec![cum(&k1), cum(&k2)] };

    let dev_noise = Normal::new(0.0, cfg.deviation_sd.max(0.0)).map_err(|e| Error::validation(e.to_string()))?;
    let mut deviations = BTreeMap::new();
    let mut anchors = BTreeMap::new();
    for (c, (code, _)) in cfg.countries.iter().enumerate() {
        let level = -4.9 + 0.15 * c as f64;
        anchors.insert(code.clone(), DVector::from_fn(na, |x, _| level + 0.095 * x as f64));
        if cfg.deviation_sd > 0.0 {
            let tilt = (c as f64 - 1.0) * 0.5;
            let beta = unit(DVector::from_fn(na, |x, _| 1.0 + tilt * frac(x)));
            let drift = 0.002 * (c as f64 - 1.0);
            let kappa: Vec<f64> = (1..ny).map(|_| drift + dev_noise.sample(&mut r)).collect();
            deviations.insert(
                code.clone(),
                CountryDeviationParams { country_code: code.clone(), beta: vec![beta], lambda: vec![cum(&kappa)] },
            );
        }
    }
    let truth = BaselineTruth { common, deviations, anchors };

    let mut countries = Vec::new();
    let mut entry_years = BTreeMap::new();
    for (c, (code, exposure)) in cfg.countries.iter().enumerate() {
        let eta = truth.country_eta(code);
        let mut cr = rng::stream(cfg.seed, 1 + c as u64);
        let exposures = DMatrix::from_fn(na, ny, |x, t| exposure * (1.0 - 0.02 * x as f64) * (1.0 + 0.002 * t as f64));
        let mut deaths = DMatrix::zeros(na, ny);
        for t in 0..ny {
            for x in 0..na {
                let mean = exposures[(x, t)] * eta[(x, t)].exp();
                deaths[(x, t)] = if cfg.poisson { poisson(mean, &mut cr)? } else { mean };
            }
        }
        countries.push(CountrySeries::from_matrices(code.clone(), w, deaths, exposures)?);
        entry_years.insert(code.clone(), w.year_min);
    }
    Ok(PanelFixture { countries, entry_years, truth })
}

/// Bivariate remainder series with bounded noise and known shock years.
///
/// The noise is uniform with unit variance per coordinate, mixed by a fixed
/// lower-triangular matrix, so its Mahalanobis norm never exceeds `√6`.
/// Each shock adds a vector of Mahalanobis length `shock_size` in a
/// different direction.
pub fn shocked_remainders(seed: u64, first_year: i32, n_years: usize, shock_years: &[i32], shock_size: f64) -> RemainderSeries {
    let mut r = rng::stream(seed, 0);
    let half = 3f64.sqrt();
    let mix = [[1.0, 0.0], [0.5, 0.8]];
    let mut u: Vec<[f64; 2]> = (0..n_years).map(|_| [r.random_range(-half..half), r.random_range(-half..half)]).collect();
    for (k, &year) in shock_years.iter().enumerate() {
        let i = (year - first_year) as usize;
        if i < n_years {
            let angle = 0.3 + 1.3 * k as f64;
            u[i][0] += shock_size * angle.cos();
            u[i][1] += shock_size * angle.sin();
        }
    }
    let remainders = (0..2)
        .map(|j| u.iter().map(|v| mix[j][0] * v[0] + mix[j][1] * v[1]).collect())
        .collect();
    RemainderSeries {
        years: (first_year..first_year + n_years as i32).collect(),
        remainders,
        trend: vec![vec![0.0; n_years]; 2],
        epoch_split_year: None,
    }
}

/// Simulate residuals from the regime model itself: a memory-chain path
/// started from its stationary law and, per year, `z = ε` in the
/// low-volatility state or `z = 𝔅·Y + ε` with `Y ~ N(μ_H, σ_H²)` otherwise.
/// Returns the residuals and the state path.
pub fn simulate_regime_residuals(params: &RegimeParams, years: &[i32], seed: u64) -> Result<(ResidualPanel, Vec<usize>)> {
    let n = params.frak_b.len();
    let chain = params.chain()?;
    let p = chain.transition_matrix();
    let pi = chain.stationary();
    let mut r = rng::stream(seed, 0);
    let draw = |probs: &[f64; 3], r: &mut rng::StreamRng| {
        let u: f64 = r.random();
        if u < probs[0] {
            0
        } else if u < probs[0] + probs[1] {
            1
        } else {
            2
        }
    };
    let mut states = Vec::with_capacity(years.len());
    let mut z = DMatrix::zeros(n, years.len());
    let mut state = draw(&pi, &mut r);
    for (t, &year) in years.iter().enumerate() {
        if t > 0 {
            state = draw(&p[state], &mut r);
        }
        states.push(state);
        let shock = if state == 0 { 0.0 } else { params.mu_h + params.sigma_h * r.sample::<f64, _>(StandardNormal) };
        for x in 0..n {
            let sd = params.sigma_e(params.age_min + x as u32, year)?;
            z[(x, t)] = params.frak_b[x] * shock + sd * r.sample::<f64, _>(StandardNormal);
        }
    }
    let ages = (0..n as u32).map(|i| params.age_min + i).collect();
    Ok((ResidualPanel { ages, years: years.to_vec(), z }, states))
}

fn poisson<R: Rng>(mean: f64, r: &mut R) -> Result<f64> {
    if mean <= 0.0 {
        return Ok(0.0);
    }
    let d = Poisson::new(mean).map_err(|e| Error::validation(e.to_string()))?;
    Ok(d.sample(r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_reproducible() {
        let a = panel_fixture(&FixtureConfig::three_country(5)).unwrap();
        let b = panel_fixture(&FixtureConfig::three_country(5)).unwrap();
        assert_eq!(a.countries, b.countries);
        let c = panel_fixture(&FixtureConfig::three_country(6)).unwrap();
        assert_ne!(a.countries[0].deaths, c.countries[0].deaths);
    }

    #[test]
    fn noise_free_deaths_equal_means() {
        let mut cfg = FixtureConfig::three_country(1);
        cfg.poisson = false;
        let f = panel_fixture(&cfg).unwrap();
        let eta = f.truth.country_eta("BBB");
        let s = &f.countries[1];
        let rebuilt = s.deaths.component_div(&s.exposures).map(f64::ln);
        assert!((rebuilt - eta).amax() < 1e-12);
    }
}
