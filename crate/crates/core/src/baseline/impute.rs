use crate::error::{Error, Result};

/// Half-width of the two-sided smoothing window used for imputation.
pub const IMPUTE_WINDOW: usize = 4;

/// Fill missing entries of a period-effect series with a two-sided
/// exponentially weighted average of observed neighbours.
///
/// Neighbour at distance `d` gets weight `2^-d`; only observed entries within
/// `window` of the gap count. When none is in range the window is widened
/// until at least one observed value is found. Observed entries are returned
/// unchanged.
pub fn impute_missing_periods(values: &[f64], missing: &[bool], window: usize) -> Result<Vec<f64>> {
    if values.len() != missing.len() {
        return Err(Error::validation("missing-period mask length differs from the series"));
    }
    if missing.iter().all(|&m| m) && !values.is_empty() {
        return Err(Error::validation("cannot impute a series without observed periods"));
    }
    let n = values.len();
    let mut out = values.to_vec();
    for t in (0..n).filter(|&t| missing[t]) {
        let mut w = window.max(1);
        loop {
            let lo = t.saturating_sub(w);
            let hi = (t + w).min(n - 1);
            let (mut num, mut den) = (0.0, 0.0);
            for s in (lo..=hi).filter(|&s| !missing[s]) {
                let weight = 0.5f64.powi(s.abs_diff(t) as i32);
                num += weight * values[s];
                den += weight;
            }
            if den > 0.0 {
                out[t] = num / den;
                break;
            }
            w *= 2;
        }
    }
    Ok(out)
}
