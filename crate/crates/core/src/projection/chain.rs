use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::regime::{MemoryChain, HVS_CONT, HVS_ENTRY, LVS};

/// Volatility regime imposed on a projection year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkovPath {
    /// State at the last observed year (most probable filtered state).
    pub start_state: usize,
    pub first_year: i32,
    /// States over the projection years.
    pub states: Vec<usize>,
}

/// Most probable state; ties go to the low-volatility state, then to the
/// lower index.
pub fn most_probable_state(probs: &[f64; 3]) -> usize {
    let mut best = LVS;
    for j in 1..3 {
        if probs[j] > probs[best] {
            best = j;
        }
    }
    best
}

fn draw_next<R: Rng>(row: &[f64; 3], r: &mut R) -> usize {
    let u: f64 = r.random();
    let mut acc = 0.0;
    for (j, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // Rounding left u above the cumulative sum: take the last reachable state.
    (0..3).rev().find(|&j| row[j] > 0.0).unwrap_or(LVS)
}

/// Simulate the chain over `n_years` years from `first_year`, starting from
/// the most probable state of `init`. Forced years override the drawn
/// state: a forced high-volatility year is `(1,2)` after a low-volatility
/// year and `(2,2)` otherwise.
pub fn simulate_chain<R: Rng>(
    chain: &MemoryChain,
    init: &[f64; 3],
    first_year: i32,
    n_years: usize,
    forced: &BTreeMap<i32, Regime>,
    r: &mut R,
) -> MarkovPath {
    let p = chain.transition_matrix();
    let start_state = most_probable_state(init);
    let mut prev = start_state;
    let mut states = Vec::with_capacity(n_years);
    for t in 0..n_years {
        let year = first_year + t as i32;
        let drawn = draw_next(&p[prev], r);
        let state = match forced.get(&year) {
            Some(Regime::Low) => LVS,
            Some(Regime::High) if prev == LVS => HVS_ENTRY,
            Some(Regime::High) => HVS_CONT,
            None => drawn,
        };
        states.push(state);
        prev = state;
    }
    MarkovPath { start_state, first_year, states }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn argmax_ties_prefer_low_state() {
        assert_eq!(most_probable_state(&[0.4, 0.2, 0.4]), LVS);
        assert_eq!(most_probable_state(&[0.2, 0.3, 0.5]), HVS_CONT);
        assert_eq!(most_probable_state(&[0.2, 0.4, 0.4]), HVS_ENTRY);
    }

    #[test]
    fn absorbing_low_state() {
        let chain = MemoryChain::new(0.0, 0.5).unwrap();
        let mut r = rng::stream(1, 0);
        let path = simulate_chain(&chain, &[1.0, 0.0, 0.0], 2022, 200, &BTreeMap::new(), &mut r);
        assert!(path.states.iter().all(|&s| s == LVS));
    }

    #[test]
    fn forcing_respects_memory() {
        let chain = MemoryChain::new(0.3, 0.3).unwrap();
        let forced = BTreeMap::from([(2022, Regime::High), (2023, Regime::Low)]);
        for seed in 0..200 {
            let mut r = rng::stream(seed, 0);
            let low = simulate_chain(&chain, &[1.0, 0.0, 0.0], 2022, 10, &forced, &mut r);
            assert_eq!(low.states[0], HVS_ENTRY);
            assert_eq!(low.states[1], LVS);
            let high = simulate_chain(&chain, &[0.0, 0.0, 1.0], 2022, 10, &forced, &mut r);
            assert_eq!(high.states[0], HVS_CONT);
            for path in [low, high] {
                for t in 1..10 {
                    let year = 2022 + t as i32;
                    if path.states[t - 1] == HVS_ENTRY && !forced.contains_key(&year) {
                        assert_eq!(path.states[t], HVS_CONT);
                    }
                }
            }
        }
    }

    #[test]
    fn transition_frequencies_match() {
        let chain = MemoryChain::new(0.1, 0.35).unwrap();
        let p = chain.transition_matrix();
        let mut counts = [[0usize; 3]; 3];
        for i in 0..10_000 {
            let mut r = rng::stream(9, i);
            let path = simulate_chain(&chain, &chain.stationary(), 2022, 59, &BTreeMap::new(), &mut r);
            let mut prev = path.start_state;
            for &s in &path.states {
                counts[prev][s] += 1;
                prev = s;
            }
        }
        for i in 0..3 {
            let total: usize = counts[i].iter().sum();
            for j in 0..3 {
                let freq = counts[i][j] as f64 / total as f64;
                assert!((freq - p[i][j]).abs() < 0.01, "({i},{j}) {freq} vs {}", p[i][j]);
            }
        }
    }
}
