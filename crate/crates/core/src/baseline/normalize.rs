//! Identifiability normalization of factor loadings and period effects.
//!
//! For two factors the invertible 2x2 transformation that makes both the age
//! loadings and the (centred) period effects orthogonal is found from the
//! roots of a quadratic in the mixing ratio; see [`normalize_two_factor`].

use nalgebra::{DVector, Matrix2};

use crate::error::{Error, Result};

/// Normalized loadings and improvement-form period effects.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub b: Vec<DVector<f64>>,
    /// Improvement-form period effects (one entry per year after the first).
    pub k: Vec<Vec<f64>>,
    /// Amount added to the age trend, `Σ_i B_i · mean(K_i)`; zero when not centred.
    pub trend_shift: DVector<f64>,
}

/// Normalize `m ∈ {1, 2}` factors. With `center` the period effects are
/// shifted to zero mean and the mean is absorbed by the trend.
pub fn normalize_factors(b: &[DVector<f64>], k: &[Vec<f64>], center: bool) -> Result<Normalized> {
    match (b, k) {
        ([b1], [k1]) => normalize_one_factor(b1, k1, center),
        ([b1, b2], [k1, k2]) => normalize_two_factor(b1, b2, k1, k2, center),
        _ => Err(Error::validation(format!(
            "normalization supports one or two factors, got {} loadings and {} period series",
            b.len(),
            k.len()
        ))),
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sign that makes the loading sum non-negative; the first non-zero entry
/// breaks an exact zero sum.
fn orientation(v: &DVector<f64>) -> f64 {
    let s = v.sum();
    if s != 0.0 {
        return s.signum();
    }
    v.iter().find(|x| **x != 0.0).map_or(1.0, |x| x.signum())
}

fn normalize_one_factor(b: &DVector<f64>, k: &[f64], center: bool) -> Result<Normalized> {
    let norm = b.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::numerical("age loading has zero or non-finite norm"));
    }
    let kbar = if center { mean(k) } else { 0.0 };
    let s = orientation(b);
    Ok(Normalized {
        b: vec![b * (s / norm)],
        k: vec![k.iter().map(|v| (v - kbar) * norm * s).collect()],
        trend_shift: b * kbar,
    })
}

/// Roots of `a·v² + b·u·v + c·u² = 0` as directions `(u, v)`, computed in the
/// cancellation-free homogeneous form. Returns `None` when the equation is
/// identically zero or has no real root.
fn homogeneous_roots(a: f64, b: f64, c: f64, tol: f64) -> Option<[(f64, f64); 2]> {
    let disc = b * b - 4.0 * a * c;
    if disc < -tol * (b * b + (4.0 * a * c).abs()) {
        return None;
    }
    let q = -0.5 * (b + b.signum() * disc.max(0.0).sqrt());
    let r1 = (a, q);
    let r2 = (q, c);
    let n1 = r1.0.hypot(r1.1);
    let n2 = r2.0.hypot(r2.1);
    if n1 == 0.0 || n2 == 0.0 {
        return None;
    }
    Some([r1, r2])
}

/// Two-factor normalization.
///
/// With Gram entries `n11, n22, b12` of the loadings and `k11, k22, k12` of
/// the centred period effects, the new loadings are `B1 + ζ B2` and
/// `B1 + η B2` (up to scale) where `ζη·ξ2 = −ξ1`, `ξ1 = k12 n11 + b12 k22`,
/// `ξ2 = k12 n22 + b12 k11`, and `η` solves
/// `ξ2 k12 η² + (ξ1 k11 − ξ2 k22) η − ξ1 k12 = 0`. When `k12 = 0` the
/// quadratic vanishes identically and the product/sum of the two ratios are
/// solved for directly.
pub fn normalize_two_factor(
    b1: &DVector<f64>,
    b2: &DVector<f64>,
    k1: &[f64],
    k2: &[f64],
    center: bool,
) -> Result<Normalized> {
    if b1.len() != b2.len() || k1.len() != k2.len() {
        return Err(Error::validation("factor lengths differ"));
    }
    let (m1, m2) = if center { (mean(k1), mean(k2)) } else { (0.0, 0.0) };
    let kc1: Vec<f64> = k1.iter().map(|v| v - m1).collect();
    let kc2: Vec<f64> = k2.iter().map(|v| v - m2).collect();

    let n11 = b1.norm_squared();
    let n22 = b2.norm_squared();
    let b12 = b1.dot(b2);
    let k11 = dot(&kc1, &kc1);
    let k22 = dot(&kc2, &kc2);
    let k12 = dot(&kc1, &kc2);
    if n11 == 0.0 || n22 == 0.0 || !(n11 * n22).is_finite() {
        return Err(Error::numerical("age loading has zero or non-finite norm"));
    }
    if n11 * n22 - b12 * b12 <= 1e-12 * n11 * n22 {
        return Err(Error::numerical("age loadings are collinear"));
    }
    let b_tol = 1e-14 * (n11 * n22).sqrt();
    let k_tol = 1e-14 * (k11 * k22).sqrt().max(f64::MIN_POSITIVE);

    if k11 == 0.0 && k22 == 0.0 {
        // Zero period effects: any basis of the loading span reproduces the
        // (flat) surface, so orthonormalize the loadings directly.
        let u1 = b1 / n11.sqrt();
        let w = b2 - &u1 * u1.dot(b2);
        let nw = w.norm();
        if nw <= 1e-12 * n22.sqrt() {
            return Err(Error::numerical("age loadings are collinear"));
        }
        let (u1, u2) = (&u1 * orientation(&u1), &w * (orientation(&w) / nw));
        let range = |v: &DVector<f64>| v.max() - v.min();
        let b = if range(&u2) > range(&u1) { vec![u2, u1] } else { vec![u1, u2] };
        return Ok(Normalized { b, k: vec![kc1, kc2], trend_shift: b1 * m1 + b2 * m2 });
    }
    let directions: [(f64, f64); 2] = if b12.abs() <= b_tol && k12.abs() <= k_tol {
        [(1.0, 0.0), (0.0, 1.0)]
    } else {
        let xi1 = k12 * n11 + b12 * k22;
        let xi2 = k12 * n22 + b12 * k11;
        let qa = xi2 * k12;
        let qb = xi1 * k11 - xi2 * k22;
        let qc = -xi1 * k12;
        let scale = (xi1.abs() + xi2.abs()) * (k11 + k22 + k12.abs());
        let quadratic = if k12.abs() > k_tol {
            homogeneous_roots(qa, qb, qc, 1e-12).filter(|_| qa.abs() + qb.abs() + qc.abs() > 1e-14 * scale)
        } else {
            None
        };
        match quadratic {
            Some(d) => d,
            None => {
                // ζ + η = S and ζη = P from
                //   n11 + P n22 + S b12 = 0,  −P k11 − k22 + S k12 = 0.
                let det = n22 * k12 + b12 * k11;
                if det.abs() <= 1e-14 * (n22 * k12.abs() + b12.abs() * k11).max(f64::MIN_POSITIVE) {
                    return Err(Error::numerical(format!(
                        "two-factor normalization is degenerate (b12 = {b12:e}, k12 = {k12:e}, k11 = {k11:e})"
                    )));
                }
                let p = (-n11 * k12 - b12 * k22) / det;
                let s = (n22 * k22 - n11 * k11) / det;
                // Ratios r = v/u solve r² − S r + P = 0.
                homogeneous_roots(1.0, -s, p, 1e-12).ok_or_else(|| {
                    Error::numerical("two-factor normalization has no real solution")
                })?
            }
        }
    };

    let mut cols = Vec::with_capacity(2);
    for (u, v) in directions {
        let w = b1 * u + b2 * v;
        let norm = w.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::numerical("normalized loading has zero norm"));
        }
        let s = orientation(&w) / norm;
        cols.push((u * s, v * s, w * s));
    }
    let range = |v: &DVector<f64>| v.max() - v.min();
    if range(&cols[1].2) > range(&cols[0].2) {
        cols.swap(0, 1);
    }
    let t = Matrix2::new(cols[0].0, cols[1].0, cols[0].1, cols[1].1);
    let inv = t
        .try_inverse()
        .filter(|i| i.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::numerical("two-factor normalization produced a singular transformation"))?;
    let nk1 = kc1.iter().zip(&kc2).map(|(a, b)| inv[(0, 0)] * a + inv[(0, 1)] * b).collect();
    let nk2 = kc1.iter().zip(&kc2).map(|(a, b)| inv[(1, 0)] * a + inv[(1, 1)] * b).collect();
    let (c0, c1) = (cols.remove(0), cols.remove(0));
    Ok(Normalized {
        b: vec![c0.2, c1.2],
        k: vec![nk1, nk2],
        trend_shift: b1 * m1 + b2 * m2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};
    use proptest::prelude::*;

    fn product(b: &[DVector<f64>], k: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(b[0].len(), k[0].len(), |x, t| b.iter().zip(k).map(|(b, k)| b[x] * k[t]).sum())
    }

    /// Independent route: with `G = R Rᵀ` (Cholesky of the loading Gram)
    /// the orthogonal directions are the eigenvectors of `Rᵀ G_K R`.
    fn eigen_route(b1: &DVector<f64>, b2: &DVector<f64>, k1: &[f64], k2: &[f64]) -> Vec<DVector<f64>> {
        let bm = DMatrix::from_columns(&[b1.clone(), b2.clone()]);
        let gram = bm.transpose() * &bm;
        let r = gram.cholesky().unwrap().l();
        let (m1, m2) = (mean(k1), mean(k2));
        let kc1: Vec<f64> = k1.iter().map(|v| v - m1).collect();
        let kc2: Vec<f64> = k2.iter().map(|v| v - m2).collect();
        let gk = nalgebra::Matrix2::new(dot(&kc1, &kc1), dot(&kc1, &kc2), dot(&kc1, &kc2), dot(&kc2, &kc2));
        let r2 = nalgebra::Matrix2::new(r[(0, 0)], r[(0, 1)], r[(1, 0)], r[(1, 1)]);
        let rinv_t = r2.transpose().try_inverse().unwrap();
        let m = r2.transpose() * gk * r2;
        let eig = SymmetricEigen::new(m);
        (0..2)
            .map(|i| {
                let c = rinv_t * eig.eigenvectors.column(i);
                let w = b1 * c[0] + b2 * c[1];
                let w = &w / w.norm();
                if w.sum() < 0.0 {
                    -w
                } else {
                    w
                }
            })
            .collect()
    }

    fn fixture() -> (DVector<f64>, DVector<f64>, Vec<f64>, Vec<f64>) {
        let b1 = DVector::from_vec(vec![0.5, 0.4, 0.3, 0.2, 0.1, 0.05]);
        let b2 = DVector::from_vec(vec![-0.2, 0.1, 0.3, 0.2, 0.4, 0.6]);
        let k1 = vec![0.3, -0.1, 0.7, 0.2, -0.4, 0.5, 0.1];
        let k2 = vec![0.2, 0.4, -0.3, 0.1, 0.6, -0.2, 0.3];
        (b1, b2, k1, k2)
    }

    #[test]
    fn constraints_hold_and_surface_is_preserved() {
        let (b1, b2, k1, k2) = fixture();
        let n = normalize_two_factor(&b1, &b2, &k1, &k2, true).unwrap();
        assert!((n.b[0].norm_squared() - 1.0).abs() < 1e-12);
        assert!((n.b[1].norm_squared() - 1.0).abs() < 1e-12);
        assert!(n.b[0].dot(&n.b[1]).abs() < 1e-12);
        assert!(dot(&n.k[0], &n.k[1]).abs() < 1e-12);
        assert!(n.k[0].iter().sum::<f64>().abs() < 1e-12);
        assert!(n.k[1].iter().sum::<f64>().abs() < 1e-12);
        assert!(n.b[0].sum() >= 0.0 && n.b[1].sum() >= 0.0);
        let r = |v: &DVector<f64>| v.max() - v.min();
        assert!(r(&n.b[0]) >= r(&n.b[1]));

        // Σ B K + (trend shift) reproduces the original surface.
        let before = product(&[b1.clone(), b2.clone()], &[k1.clone(), k2.clone()]);
        let mut after = product(&n.b, &n.k);
        for mut col in after.column_iter_mut() {
            col += &n.trend_shift;
        }
        assert!((before - after).amax() < 1e-12);
    }

    #[test]
    fn agrees_with_eigen_route() {
        let (b1, b2, k1, k2) = fixture();
        let n = normalize_two_factor(&b1, &b2, &k1, &k2, true).unwrap();
        let oracle = eigen_route(&b1, &b2, &k1, &k2);
        for b in &n.b {
            let best = oracle.iter().map(|o| (b - o).amax()).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-10, "loading mismatch {best}");
        }
    }

    #[test]
    fn orthogonal_input_only_rescales() {
        let b1 = DVector::from_vec(vec![2.0, 0.0, 0.0]);
        let b2 = DVector::from_vec(vec![0.0, 3.0, 0.0]);
        let k1 = vec![1.0, -1.0, 0.0];
        let k2 = vec![1.0, 1.0, -2.0];
        let n = normalize_two_factor(&b1, &b2, &k1, &k2, true).unwrap();
        assert_eq!(n.b[0].as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(n.b[1].as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(n.k[0], vec![2.0, -2.0, 0.0]);
        assert_eq!(n.k[1], vec![3.0, 3.0, -6.0]);
    }

    #[test]
    fn uncorrelated_periods_with_correlated_loadings() {
        // k12 = 0 makes the quadratic vanish; the product/sum route is used.
        let b1 = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        let b2 = DVector::from_vec(vec![1.0, 0.0, 1.0]);
        let k1 = vec![1.0, -1.0, 0.0];
        let k2 = vec![2.0, 2.0, -4.0];
        let n = normalize_two_factor(&b1, &b2, &k1, &k2, true).unwrap();
        assert!(n.b[0].dot(&n.b[1]).abs() < 1e-12);
        assert!(dot(&n.k[0], &n.k[1]).abs() < 1e-12);
        let before = product(&[b1, b2], &[k1, k2]);
        let after = product(&n.b, &n.k);
        assert!((before - after).amax() < 1e-12);
    }

    #[test]
    fn collinear_loadings_are_degenerate() {
        let b1 = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let b2 = &b1 * 2.0;
        let k1 = vec![1.0, -1.0, 0.5, 0.2];
        let k2 = vec![0.3, 0.1, -0.7, 0.4];
        assert!(normalize_two_factor(&b1, &b2, &k1, &k2, true).is_err());
    }

    #[test]
    fn one_factor() {
        let b = DVector::from_vec(vec![-3.0, -4.0]);
        let n = normalize_factors(&[b], &[vec![1.0, 2.0, 3.0]], true).unwrap();
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-14);
        assert!(close(n.b[0].as_slice(), &[0.6, 0.8]));
        assert!(close(&n.k[0], &[5.0, 0.0, -5.0]));
        assert!(close(n.trend_shift.as_slice(), &[-6.0, -8.0]));
    }

    #[test]
    fn uncentred_keeps_mean() {
        let (b1, b2, k1, k2) = fixture();
        let n = normalize_two_factor(&b1, &b2, &k1, &k2, false).unwrap();
        assert_eq!(n.trend_shift.amax(), 0.0);
        let before = product(&[b1, b2], &[k1, k2]);
        let after = product(&n.b, &n.k);
        assert!((before - after).amax() < 1e-12);
        assert!(n.b[0].dot(&n.b[1]).abs() < 1e-12);
        assert!(dot(&n.k[0], &n.k[1]).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn random_inputs_satisfy_constraints(
            b in proptest::collection::vec(-1.0f64..1.0, 16),
            k in proptest::collection::vec(-1.0f64..1.0, 20),
        ) {
            let b1 = DVector::from_column_slice(&b[..8]);
            let b2 = DVector::from_column_slice(&b[8..]);
            let (k1, k2) = (k[..10].to_vec(), k[10..].to_vec());
            let bm = DMatrix::from_columns(&[b1.clone(), b2.clone()]);
            let sv = bm.singular_values();
            prop_assume!(sv.min() > 1e-3 * sv.max());
            let n = normalize_two_factor(&b1, &b2, &k1, &k2, true).unwrap();
            prop_assert!((n.b[0].norm_squared() - 1.0).abs() < 1e-9);
            prop_assert!((n.b[1].norm_squared() - 1.0).abs() < 1e-9);
            prop_assert!(n.b[0].dot(&n.b[1]).abs() < 1e-8);
            let scale = dot(&n.k[0], &n.k[0]).sqrt() * dot(&n.k[1], &n.k[1]).sqrt();
            prop_assert!(dot(&n.k[0], &n.k[1]).abs() <= 1e-8 * scale.max(1.0));
            let before = product(&[b1, b2], &[k1.clone(), k2.clone()]);
            let mut after = product(&n.b, &n.k);
            for mut col in after.column_iter_mut() { col += &n.trend_shift; }
            prop_assert!((before - after).amax() < 1e-9);
        }
    }
}
