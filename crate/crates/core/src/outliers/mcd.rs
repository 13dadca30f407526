//! FAST-MCD robust location and scatter.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::{par, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McdConfig {
    /// Random initial subsets.
    pub trials: usize,
    /// C-steps applied to every trial before ranking.
    pub initial_csteps: usize,
    /// Best trials iterated to convergence.
    pub refine: usize,
    /// Quantile of χ²_p used for the reweighting step.
    pub reweight_quantile: f64,
    pub seed: u64,
}

impl Default for McdConfig {
    fn default() -> Self {
        Self { trials: 500, initial_csteps: 2, refine: 10, reweight_quantile: 0.975, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McdEstimate {
    pub location: DVector<f64>,
    pub scatter: DMatrix<f64>,
    /// Indices of the optimal h-subset.
    pub support: Vec<usize>,
    pub raw_determinant: f64,
}

impl McdEstimate {
    /// Robust Mahalanobis distances of `points` (rows).
    pub fn distances(&self, points: &DMatrix<f64>) -> Result<Vec<f64>> {
        mahalanobis(points, &self.location, &self.scatter)
    }
}

/// Mahalanobis distances of the rows of `points`.
pub fn mahalanobis(points: &DMatrix<f64>, location: &DVector<f64>, scatter: &DMatrix<f64>) -> Result<Vec<f64>> {
    let chol = scatter
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("robust scatter matrix is singular"))?;
    Ok((0..points.nrows())
        .map(|i| {
            let r = points.row(i).transpose() - location;
            let z = chol.l().solve_lower_triangular(&r).expect("triangular solve");
            z.norm()
        })
        .collect())
}

/// Subset size `⌈(n + p + 1) / 2⌉`.
pub fn subset_size(n: usize, p: usize) -> usize {
    (n + p + 2) / 2
}

fn mean_cov(points: &DMatrix<f64>, idx: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let p = points.ncols();
    let k = idx.len() as f64;
    let mut mean = DVector::zeros(p);
    for &i in idx {
        mean += points.row(i).transpose();
    }
    mean /= k;
    let mut cov = DMatrix::zeros(p, p);
    for &i in idx {
        let r = points.row(i).transpose() - &mean;
        cov += &r * r.transpose();
    }
    cov /= k;
    (mean, cov)
}

fn squared_distances(points: &DMatrix<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Option<Vec<f64>> {
    let chol = cov.clone().cholesky()?;
    Some(
        (0..points.nrows())
            .map(|i| {
                let r = points.row(i).transpose() - mean;
                chol.l().solve_lower_triangular(&r).map_or(f64::INFINITY, |z| z.norm_squared())
            })
            .collect(),
    )
}

fn smallest(d2: &[f64], h: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..d2.len()).collect();
    order.sort_by(|&a, &b| d2[a].total_cmp(&d2[b]).then(a.cmp(&b)));
    order.truncate(h);
    order.sort_unstable();
    order
}

/// One concentration step; `None` when the subset covariance is singular.
fn c_step(points: &DMatrix<f64>, subset: &[usize], h: usize) -> Option<(Vec<usize>, f64)> {
    let (mean, cov) = mean_cov(points, subset);
    let d2 = squared_distances(points, &mean, &cov)?;
    let next = smallest(&d2, h);
    let (_, cov) = mean_cov(points, &next);
    Some((next, cov.determinant()))
}

fn trial(points: &DMatrix<f64>, h: usize, cfg: &McdConfig, index: usize) -> Option<(Vec<usize>, f64)> {
    let (n, p) = points.shape();
    let mut r = rng::stream(cfg.seed, index as u64);
    let order: Vec<usize> = sample(&mut r, n, n).into_vec();
    // Grow the elemental (p+1)-subset until its covariance is non-singular.
    let mut size = (p + 1).min(n);
    let start = loop {
        let subset = &order[..size];
        let (mean, cov) = mean_cov(points, subset);
        if cov.determinant() > 0.0 {
            if let Some(d2) = squared_distances(points, &mean, &cov) {
                break smallest(&d2, h);
            }
        }
        if size == n {
            return None;
        }
        size += 1;
    };
    let mut current = (start.clone(), mean_cov(points, &start).1.determinant());
    for _ in 0..cfg.initial_csteps {
        current = c_step(points, &current.0, h)?;
    }
    Some(current)
}

/// FAST-MCD on the rows of `points`, with consistency correction and one
/// reweighting step. Trials use independent seeded streams, so the result
/// does not depend on the thread count.
pub fn fast_mcd(points: &DMatrix<f64>, cfg: &McdConfig) -> Result<McdEstimate> {
    let (n, p) = points.shape();
    if p == 0 || n < p + 2 {
        return Err(Error::validation(format!("MCD needs at least {} points in dimension {p}, got {n}", p + 2)));
    }
    let h = subset_size(n, p);
    let mut trials: Vec<(Vec<usize>, f64)> =
        par::map_indexed(cfg.trials.max(1), |i| trial(points, h, cfg, i)).into_iter().flatten().collect();
    if trials.is_empty() {
        return Err(Error::numerical("every MCD subset has a singular covariance"));
    }
    trials.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    trials.dedup_by(|a, b| a.0 == b.0);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for (subset, det) in trials.into_iter().take(cfg.refine.max(1)) {
        let mut cur = (subset, det);
        for _ in 0..100 {
            if cur.1 <= 0.0 {
                break;
            }
            match c_step(points, &cur.0, h) {
                Some(next) if next.1 < cur.1 => cur = next,
                _ => break,
            }
        }
        if best.as_ref().is_none_or(|b| cur.1 < b.1) {
            best = Some(cur);
        }
    }
    let (support, raw_det) = best.expect("at least one trial");
    if !(raw_det > 0.0) {
        return Err(Error::numerical(
            "robust scatter matrix is singular: more than half of the points lie on a hyperplane",
        ));
    }
    let chi = ChiSquared::new(p as f64).map_err(|e| Error::numerical(e.to_string()))?;
    let median_chi = chi.inverse_cdf(0.5);

    let (raw_mean, raw_cov) = mean_cov(points, &support);
    let d2 = squared_distances(points, &raw_mean, &raw_cov).ok_or_else(|| Error::numerical("singular raw MCD scatter"))?;
    let raw_cov = raw_cov * (median(&d2) / median_chi);

    let d2 = squared_distances(points, &raw_mean, &raw_cov).ok_or_else(|| Error::numerical("singular raw MCD scatter"))?;
    let cutoff = chi.inverse_cdf(cfg.reweight_quantile);
    let kept: Vec<usize> = (0..n).filter(|&i| d2[i] <= cutoff).collect();
    if kept.len() <= p {
        return Err(Error::numerical("too few points kept by MCD reweighting"));
    }
    let (mean, cov) = mean_cov(points, &kept);
    let cov = cov * (kept.len() as f64 / (kept.len() - 1) as f64);
    let d2 = squared_distances(points, &mean, &cov).ok_or_else(|| Error::numerical("singular reweighted MCD scatter"))?;
    let scatter = cov * (median(&d2) / median_chi);
    Ok(McdEstimate { location: mean, scatter, support, raw_determinant: raw_det })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn cloud(n: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, 0);
        DMatrix::from_fn(n, 2, |_, _| r.sample(StandardNormal))
    }

    #[test]
    fn subset_sizes() {
        assert_eq!(subset_size(100, 2), 52);
        assert_eq!(subset_size(101, 2), 52);
        assert_eq!(subset_size(10, 3), 7);
    }

    #[test]
    fn distance_with_known_parameters() {
        let pts = DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 1.0, -1.0]);
        let d = mahalanobis(&pts, &DVector::zeros(2), &DMatrix::identity(2, 2)).unwrap();
        assert!((d[0] - 5.0).abs() < 1e-14);
        let scatter = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let d = mahalanobis(&pts, &DVector::zeros(2), &scatter).unwrap();
        assert!((d[0] - (2.25f64 + 16.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn contamination_does_not_move_estimate() {
        let mut pts = cloud(80, 3);
        for i in 0..15 {
            pts[(i, 0)] = 20.0 + i as f64;
            pts[(i, 1)] = -20.0;
        }
        let est = fast_mcd(&pts, &McdConfig::default()).unwrap();
        assert!(est.location.amax() < 0.6, "{}", est.location);
        assert!(est.support.iter().all(|&i| i >= 15));
    }

    #[test]
    fn result_is_reproducible() {
        let pts = cloud(60, 9);
        let a = fast_mcd(&pts, &McdConfig::default()).unwrap();
        let b = fast_mcd(&pts, &McdConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn collinear_majority_is_singular() {
        let mut pts = DMatrix::from_fn(20, 2, |i, j| if j == 0 { i as f64 } else { 2.0 * i as f64 });
        pts[(0, 1)] = 5.0;
        assert!(fast_mcd(&pts, &McdConfig::default()).is_err());
    }
}
