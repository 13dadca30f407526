//! Natural cubic smoothing spline (Reinsch form) with GCV-selected penalty.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of penalty values searched by GCV.
pub const GCV_GRID_SIZE: usize = 61;
pub const GCV_LAMBDA_MIN: f64 = 1e-4;
pub const GCV_LAMBDA_MAX: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineFit {
    pub knots: Vec<f64>,
    /// Fitted values at the knots.
    pub values: Vec<f64>,
    /// Second derivatives at the knots (zero at both ends).
    pub second_derivatives: Vec<f64>,
    pub lambda: f64,
    pub gcv_score: f64,
}

impl SplineFit {
    /// Evaluate the spline; outside the knot range it continues linearly.
    pub fn evaluate(&self, x: f64) -> f64 {
        let (t, g, c) = (&self.knots, &self.values, &self.second_derivatives);
        let n = t.len();
        if x <= t[0] {
            let h = t[1] - t[0];
            let slope = (g[1] - g[0]) / h - h * c[1] / 6.0;
            return g[0] + slope * (x - t[0]);
        }
        if x >= t[n - 1] {
            let h = t[n - 1] - t[n - 2];
            let slope = (g[n - 1] - g[n - 2]) / h + h * c[n - 2] / 6.0;
            return g[n - 1] + slope * (x - t[n - 1]);
        }
        let i = t.partition_point(|&k| k <= x).saturating_sub(1).min(n - 2);
        let h = t[i + 1] - t[i];
        let (a, b) = (x - t[i], t[i + 1] - x);
        (a * g[i + 1] + b * g[i]) / h - a * b / 6.0 * ((1.0 + a / h) * c[i + 1] + (1.0 + b / h) * c[i])
    }
}

/// Band matrices of the Reinsch form: `Q` (n x n-2) and `R` (n-2 x n-2),
/// with roughness penalty `gᵀ Q R⁻¹ Qᵀ g`.
fn reinsch_matrices(knots: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = knots.len();
    let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
    let mut q = DMatrix::zeros(n, n - 2);
    let mut r = DMatrix::zeros(n - 2, n - 2);
    for j in 1..n - 1 {
        let c = j - 1;
        q[(j - 1, c)] = 1.0 / h[j - 1];
        q[(j, c)] = -1.0 / h[j - 1] - 1.0 / h[j];
        q[(j + 1, c)] = 1.0 / h[j];
        r[(c, c)] = (h[j - 1] + h[j]) / 3.0;
        if c + 1 < n - 2 {
            r[(c, c + 1)] = h[j] / 6.0;
            r[(c + 1, c)] = h[j] / 6.0;
        }
    }
    (q, r)
}

struct Solved {
    values: DVector<f64>,
    gamma: DVector<f64>,
    trace: f64,
}

fn solve(q: &DMatrix<f64>, r: &DMatrix<f64>, qtq: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<Solved> {
    let n = y.len();
    let system = r + qtq * lambda;
    let chol = system
        .cholesky()
        .ok_or_else(|| Error::numerical(format!("singular spline system at lambda = {lambda:e}")))?;
    let gamma = chol.solve(&(q.transpose() * y));
    let values = y - q * &gamma * lambda;
    // tr S = n − λ tr((R + λQᵀQ)⁻¹ QᵀQ)
    let trace = n as f64 - lambda * chol.solve(qtq).trace();
    Ok(Solved { values, gamma, trace })
}

fn check_knots(knots: &[f64], values: &[f64]) -> Result<()> {
    if knots.len() != values.len() {
        return Err(Error::validation("knots and values differ in length"));
    }
    if knots.len() < 4 {
        return Err(Error::validation("a smoothing spline needs at least 4 points"));
    }
    if knots.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::validation("spline knots must be strictly increasing"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("spline data contain non-finite values"));
    }
    Ok(())
}

/// Smoothing spline for a fixed penalty `lambda`.
pub fn fit_spline_with_lambda(knots: &[f64], values: &[f64], lambda: f64) -> Result<SplineFit> {
    check_knots(knots, values)?;
    let (q, r) = reinsch_matrices(knots);
    let qtq = q.transpose() * &q;
    let y = DVector::from_column_slice(values);
    let s = solve(&q, &r, &qtq, &y, lambda)?;
    Ok(assemble(knots, &y, s, lambda))
}

fn assemble(knots: &[f64], y: &DVector<f64>, s: Solved, lambda: f64) -> SplineFit {
    let n = knots.len();
    let rss = (y - &s.values).norm_squared();
    let gcv_score = n as f64 * rss / (n as f64 - s.trace).powi(2);
    let mut second = vec![0.0; n];
    second[1..n - 1].copy_from_slice(s.gamma.as_slice());
    SplineFit { knots: knots.to_vec(), values: s.values.as_slice().to_vec(), second_derivatives: second, lambda, gcv_score }
}

/// Smoothing spline with the penalty minimizing GCV over a log-spaced grid.
pub fn fit_spline_gcv(knots: &[f64], values: &[f64]) -> Result<SplineFit> {
    check_knots(knots, values)?;
    let (q, r) = reinsch_matrices(knots);
    let qtq = q.transpose() * &q;
    let y = DVector::from_column_slice(values);
    let (lo, hi) = (GCV_LAMBDA_MIN.ln(), GCV_LAMBDA_MAX.ln());
    let mut best: Option<SplineFit> = None;
    for i in 0..GCV_GRID_SIZE {
        let lambda = (lo + (hi - lo) * i as f64 / (GCV_GRID_SIZE - 1) as f64).exp();
        let fit = assemble(knots, &y, solve(&q, &r, &qtq, &y, lambda)?, lambda);
        // A perfectly interpolable series gives 0/0; treat it as a perfect score.
        let score = if fit.gcv_score.is_nan() { 0.0 } else { fit.gcv_score };
        if best.as_ref().is_none_or(|b| score < b.gcv_score) {
            best = Some(SplineFit { gcv_score: score, ..fit });
        }
    }
    best.ok_or_else(|| Error::numerical("empty GCV grid"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| 1900.0 + i as f64).collect()
    }

    #[test]
    fn straight_line_is_reproduced() {
        let x = grid(30);
        let y: Vec<f64> = x.iter().map(|t| 0.5 - 0.03 * (t - 1900.0)).collect();
        for lambda in [1e-4, 1.0, 1e4] {
            let f = fit_spline_with_lambda(&x, &y, lambda).unwrap();
            for (xi, yi) in x.iter().zip(&y) {
                assert!((f.evaluate(*xi) - yi).abs() < 1e-10);
            }
            assert!((f.evaluate(1880.0) - (0.5 + 0.6)).abs() < 1e-10);
        }
        let f = fit_spline_gcv(&x, &y).unwrap();
        assert!((f.evaluate(1915.5) - (0.5 - 0.03 * 15.5)).abs() < 1e-10);
    }

    #[test]
    fn large_penalty_gives_least_squares_line() {
        let x = grid(12);
        let y = vec![0.3, -0.2, 0.5, 0.1, 0.9, 0.4, 1.2, 0.8, 1.0, 1.6, 1.1, 1.9];
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let f = fit_spline_with_lambda(&x, &y, 1e12).unwrap();
        for xi in &x {
            assert!((f.evaluate(*xi) - (my + slope * (xi - mx))).abs() < 1e-6);
        }
    }

    #[test]
    fn evaluation_interpolates_knot_values() {
        let x = grid(10);
        let y: Vec<f64> = x.iter().map(|t| ((t - 1900.0) * 0.7).sin()).collect();
        let f = fit_spline_with_lambda(&x, &y, 0.3).unwrap();
        for (xi, gi) in f.knots.iter().zip(&f.values) {
            assert!((f.evaluate(*xi) - gi).abs() < 1e-12);
        }
        // Continuity of the first derivative across a knot.
        let d = |x: f64| (f.evaluate(x + 1e-6) - f.evaluate(x - 1e-6)) / 2e-6;
        let left = (f.evaluate(1905.0) - f.evaluate(1905.0 - 1e-5)) / 1e-5;
        let right = (f.evaluate(1905.0 + 1e-5) - f.evaluate(1905.0)) / 1e-5;
        assert!((left - right).abs() < 1e-3, "{left} {right} {}", d(1905.0));
    }

    #[test]
    fn gcv_fit_beats_noise_level_on_noisy_cubic() {
        let mut r = crate::rng::stream(17, 0);
        let sd = 0.1;
        let t: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let truth: Vec<f64> = t.iter().map(|v| v.powi(3) / 1e6).collect();
        let y: Vec<f64> = truth.iter().map(|v| v + sd * r.sample::<f64, _>(StandardNormal)).collect();
        let f = fit_spline_gcv(&t, &y).unwrap();
        let rmse = (t.iter().zip(&truth).map(|(x, v)| (f.evaluate(*x) - v).powi(2)).sum::<f64>() / 100.0).sqrt();
        assert!(rmse < sd, "rmse {rmse}");
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(fit_spline_gcv(&[1.0, 2.0, 2.0, 3.0], &[0.0; 4]).is_err());
        assert!(fit_spline_gcv(&[1.0, 2.0, 3.0], &[0.0; 3]).is_err());
    }
}
