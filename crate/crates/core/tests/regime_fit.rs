use std::time::Instant;

use shockmort::regime::{fit_regime, filter_loglik, AgeGroup, RegimeConfig, RegimeParams};
use shockmort::synthetic::simulate_regime_residuals;

fn table_two_truth() -> RegimeParams {
    let raw: Vec<f64> = (0..20).map(|i| 1.0 - 0.03 * i as f64).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    RegimeParams {
        p12: 0.01873,
        p21: 0.37218,
        sigma_e1: 0.12612,
        slope1: -0.00171,
        sigma_e2: 0.18224,
        slope2: -0.00344,
        mu_h: 0.02684,
        sigma_h: 0.61850,
        frak_b: raw.into_iter().map(|v| v / norm).collect(),
        epoch_year: 1970,
        age_min: 20,
    }
}

#[test]
fn simulated_parameters_are_recovered() {
    let truth = table_two_truth();
    let years: Vec<i32> = (1722..2022).collect();
    let (z, _) = simulate_regime_residuals(&truth, &years, 7).unwrap();
    let start = Instant::now();
    let fit = fit_regime(&z, &AgeGroup::new(20, 39), &vec![1.0; 300], &RegimeConfig::default()).unwrap();
    let p = &fit.params;
    let cosine: f64 = p.frak_b.iter().zip(&truth.frak_b).map(|(a, b)| a * b).sum();
    println!("{:?} rounds {} in {:?}; cosine {cosine}", p, fit.rounds, start.elapsed());
    assert!((p.p12 - truth.p12).abs() < 0.02);
    assert!(((p.sigma_h - truth.sigma_h) / truth.sigma_h).abs() < 0.25);
    assert!(cosine > 0.95);
    let truth_ll = filter_loglik(&z, &truth, &vec![1.0; 300]).unwrap().loglik;
    assert!(fit.loglik >= truth_ll - 1e-6);
}
