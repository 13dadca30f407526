use std::collections::BTreeSet;

use nalgebra::DMatrix;
use shockmort::baseline::{fit_common_trend, FitConfig};
use shockmort::data::build_panel;
use shockmort::outliers::{detect_from_period_effects, detect_outliers, McdConfig, OutlierConfig, RemainderSeries};
use shockmort::synthetic::{panel_fixture, shocked_remainders, FixtureConfig};

const SHOCKS: [i32; 5] = [1931, 1950, 1967, 1988, 2006];

#[test]
fn injected_shocks_are_recovered_across_seeds() {
    let mut exact = 0;
    for seed in 0..20 {
        let rem = shocked_remainders(seed, 1920, 100, &SHOCKS, 8.0);
        let mcd = McdConfig { seed, ..McdConfig::default() };
        let report = detect_outliers(&rem, 0.99, &mcd).unwrap();
        if report.outlier_years == SHOCKS.iter().copied().collect::<BTreeSet<_>>() {
            exact += 1;
        }
    }
    assert!(exact >= 19, "exact recovery in {exact}/20 seeds");
}

#[test]
fn flag_set_is_affine_equivariant() {
    let rem = shocked_remainders(3, 1920, 100, &SHOCKS, 8.0);
    let base = detect_outliers(&rem, 0.99, &McdConfig::default()).unwrap();
    let map = DMatrix::from_row_slice(2, 2, &[2.0, -1.5, 0.3, 0.7]);
    let transformed: Vec<Vec<f64>> = (0..2)
        .map(|j| (0..100).map(|t| map[(j, 0)] * rem.remainders[0][t] + map[(j, 1)] * rem.remainders[1][t] + 5.0).collect())
        .collect();
    let rem2 = RemainderSeries { remainders: transformed, ..rem.clone() };
    let other = detect_outliers(&rem2, 0.99, &McdConfig::default()).unwrap();
    assert_eq!(base.outlier_years, other.outlier_years);
    for (a, b) in base.distances.iter().zip(&other.distances) {
        assert!((a - b).abs() < 1e-8 * a.max(1.0));
    }
}

#[test]
fn detection_is_thread_count_independent() {
    let rem = shocked_remainders(4, 1920, 100, &SHOCKS, 8.0);
    let a = detect_outliers(&rem, 0.99, &McdConfig::default()).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| detect_outliers(&rem, 0.99, &McdConfig::default()).unwrap());
    assert_eq!(a, b);
}

#[test]
fn fixture_shock_years_are_detected_from_fitted_period_effects() {
    let f = panel_fixture(&FixtureConfig::three_country(21)).unwrap();
    let w = f.countries[0].window;
    let panel = build_panel(&f.countries, &f.entry_years, &w).unwrap();
    let (common, _) = fit_common_trend(&panel, &vec![true; w.n_years()], &FitConfig::default()).unwrap();
    let years: Vec<i32> = w.years().collect();
    let series: Vec<Vec<f64>> = common.l.iter().map(|l| l.as_slice().to_vec()).collect();
    let cfg = OutlierConfig { epoch_split_year: None, prior_exclusions: vec![1992, 2008], ..OutlierConfig::default() };
    let (_, rem, report) = detect_from_period_effects(&years, &series, &cfg).unwrap();
    assert!(report.outlier_years.contains(&1992), "{:?}", report.outlier_years);
    assert!(report.outlier_years.contains(&2008), "{:?}", report.outlier_years);
    for i in 0..years.len() {
        assert!((rem.remainders[0][i] + rem.trend[0][i] - series[0][i]).abs() <= 1e-15 * series[0][i].abs().max(1.0));
    }
}
