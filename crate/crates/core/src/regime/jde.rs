//! Self-adaptive differential evolution (jDE, DE/rand/1/bin) for box-bounded
//! maximization.
//!
//! Trial vectors of a generation are drawn sequentially from the
//! generation's own random stream and then evaluated in parallel, so the
//! result does not depend on the thread count.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{par, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JdeConfig {
    /// Population size per dimension.
    pub pop_per_dim: usize,
    pub max_generations: usize,
    /// Probability of resampling `F` for an individual.
    pub tau_f: f64,
    /// Probability of resampling `CR` for an individual.
    pub tau_cr: f64,
    pub f_lower: f64,
    pub f_upper: f64,
    /// Stop once `max − min` of the population objective falls below
    /// `spread_tol · (|best| + spread_tol)`.
    pub spread_tol: f64,
    /// Stop after this many generations without improvement of the best value.
    pub stall_generations: usize,
    pub seed: u64,
}

impl Default for JdeConfig {
    fn default() -> Self {
        Self {
            pop_per_dim: 10,
            max_generations: 3000,
            tau_f: 0.1,
            tau_cr: 0.1,
            f_lower: 0.1,
            f_upper: 0.9,
            spread_tol: 1e-9,
            stall_generations: 200,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JdeResult {
    pub best: Vec<f64>,
    pub value: f64,
    pub generations: usize,
    pub evaluations: usize,
}

/// Maximize `objective` over the box `[lower, upper]`. Infeasible points
/// should return `-inf`. `start` points (clamped to the box) replace the
/// first members of the initial population.
pub fn maximize<F>(objective: F, lower: &[f64], upper: &[f64], start: &[Vec<f64>], cfg: &JdeConfig) -> Result<JdeResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = lower.len();
    if dim == 0 || upper.len() != dim || lower.iter().zip(upper).any(|(l, u)| !(l < u)) {
        return Err(Error::validation("jDE needs a non-empty box with lower < upper"));
    }
    let np = (cfg.pop_per_dim * dim).max(4);
    let mut r = rng::stream(cfg.seed, 0);
    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| (0..dim).map(|j| r.random_range(lower[j]..upper[j])).collect())
        .collect();
    for (i, s) in start.iter().take(np).enumerate() {
        if s.len() == dim {
            pop[i] = s.iter().enumerate().map(|(j, v)| v.clamp(lower[j], upper[j])).collect();
        }
    }
    let eval = |x: &Vec<f64>| {
        let v = objective(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let mut fit: Vec<f64> = par::map_slice(&pop, eval);
    let mut evaluations = np;
    let mut f_param = vec![0.5; np];
    let mut cr_param = vec![0.9; np];
    let best_of = |fit: &[f64]| {
        (0..fit.len()).fold(0, |b, i| if fit[i] > fit[b] { i } else { b })
    };
    let mut best_value = fit[best_of(&fit)];
    let mut stall = 0;
    let mut generations = 0;

    for g in 1..=cfg.max_generations {
        generations = g;
        let mut r = rng::stream(cfg.seed, g as u64);
        let mut trials = Vec::with_capacity(np);
        let mut params = Vec::with_capacity(np);
        for i in 0..np {
            let f = if r.random::<f64>() < cfg.tau_f {
                cfg.f_lower + r.random::<f64>() * cfg.f_upper
            } else {
                f_param[i]
            };
            let cr = if r.random::<f64>() < cfg.tau_cr { r.random::<f64>() } else { cr_param[i] };
            let mut pick = |exclude: &[usize]| loop {
                let k = r.random_range(0..np);
                if !exclude.contains(&k) {
                    break k;
                }
            };
            let a = pick(&[i]);
            let b = pick(&[i, a]);
            let c = pick(&[i, a, b]);
            let jrand = r.random_range(0..dim);
            let mut u = pop[i].clone();
            for j in 0..dim {
                if j == jrand || r.random::<f64>() < cr {
                    let v = pop[a][j] + f * (pop[b][j] - pop[c][j]);
                    u[j] = if v < lower[j] || v > upper[j] { r.random_range(lower[j]..upper[j]) } else { v };
                }
            }
            trials.push(u);
            params.push((f, cr));
        }
        let trial_fit = par::map_slice(&trials, eval);
        evaluations += np;
        for (i, (u, fu)) in trials.into_iter().zip(trial_fit).enumerate() {
            if fu >= fit[i] {
                pop[i] = u;
                fit[i] = fu;
                f_param[i] = params[i].0;
                cr_param[i] = params[i].1;
            }
        }
        let b = fit[best_of(&fit)];
        if b > best_value {
            best_value = b;
            stall = 0;
        } else {
            stall += 1;
        }
        let worst = fit.iter().cloned().fold(f64::INFINITY, f64::min);
        let spread = best_value - worst;
        if best_value.is_finite() && spread <= cfg.spread_tol * (best_value.abs() + cfg.spread_tol) {
            break;
        }
        if stall >= cfg.stall_generations {
            break;
        }
    }
    let bi = best_of(&fit);
    if !fit[bi].is_finite() {
        return Err(Error::Infeasible(format!(
            "no feasible point found after {generations} generations ({evaluations} evaluations)"
        )));
    }
    Ok(JdeResult { best: pop[bi].clone(), value: fit[bi], generations, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_maximum() {
        let target = [0.3, -1.2, 2.5];
        let obj = |x: &[f64]| -x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let res = maximize(obj, &[-5.0; 3], &[5.0; 3], &[], &JdeConfig::default()).unwrap();
        for (a, b) in res.best.iter().zip(&target) {
            assert!((a - b).abs() < 1e-4, "{:?}", res.best);
        }
    }

    #[test]
    fn rosenbrock() {
        let obj = |x: &[f64]| -(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2));
        let cfg = JdeConfig { stall_generations: 500, ..JdeConfig::default() };
        let res = maximize(obj, &[-2.0; 2], &[2.0; 2], &[], &cfg).unwrap();
        assert!((res.best[0] - 1.0).abs() < 1e-3 && (res.best[1] - 1.0).abs() < 1e-3, "{:?}", res);
    }

    #[test]
    fn infeasible_everywhere_is_an_error() {
        let cfg = JdeConfig { max_generations: 5, ..JdeConfig::default() };
        assert!(maximize(|_| f64::NEG_INFINITY, &[0.0], &[1.0], &[], &cfg).is_err());
    }

    #[test]
    fn same_result_for_any_thread_count() {
        let obj = |x: &[f64]| -(x[0] - 0.1).powi(2) - (x[1] + 0.4).abs();
        let cfg = JdeConfig::default();
        let a = maximize(obj, &[-1.0; 2], &[1.0; 2], &[], &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| maximize(obj, &[-1.0; 2], &[1.0; 2], &[], &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn start_point_is_kept_when_optimal() {
        let obj = |x: &[f64]| if (x[0] - 0.25).abs() < 1e-12 { 1.0 } else { 0.0 };
        let cfg = JdeConfig { max_generations: 10, ..JdeConfig::default() };
        let res = maximize(obj, &[0.0], &[1.0], &[vec![0.25]], &cfg).unwrap();
        assert_eq!(res.value, 1.0);
    }
}
