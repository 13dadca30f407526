//! Scenario files.
//!
//! `scenarios.bin` layout, all little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `SHKSCN01` |
//! | 8 × 3 | `n_paths`, `n_years`, `n_ages` as u64 |
//! | 8 × 2 | first projection year as i64, first age as u64 |
//! | 8 | seed as u64 |
//! | 8 × n_ages | anchor `μ` as f64 |
//! | 8 × n_paths·n_years·n_ages | `μ` as f64, path-major, then year, then age |
//! | n_paths | 1 if the path holds an un-offset shock, else 0 |

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::ScenarioSet;
use crate::error::{Error, Result};
use crate::par;

const MAGIC: &[u8; 8] = b"SHKSCN01";

/// Levels of the quantile summary.
pub const QUANTILE_LEVELS: [f64; 5] = [0.005, 0.05, 0.5, 0.95, 0.995];

/// Linearly interpolated quantile of ascending `sorted` values (the
/// `(n − 1)p` positioning).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl ScenarioSet {
    /// Per-cell quantiles of `q` across paths, rows ordered by age then year.
    pub fn quantile_summary(&self, levels: &[f64]) -> Result<Vec<(u32, i32, Vec<f64>)>> {
        if self.n_paths == 0 {
            return Err(Error::validation("scenario set is empty"));
        }
        let cells = self.n_ages * self.n_years;
        Ok(par::map_indexed(cells, |c| {
            let (x, t) = (c / self.n_years, c % self.n_years);
            let mut v: Vec<f64> = (0..self.n_paths).map(|p| self.q(x, t, p)).collect();
            v.sort_by(f64::total_cmp);
            let qs = levels.iter().map(|&l| quantile_sorted(&v, l)).collect();
            (self.age_min + x as u32, self.first_year + t as i32, qs)
        }))
    }

    pub fn write_quantile_csv(&self, path: &Path) -> Result<()> {
        let rows = self.quantile_summary(&QUANTILE_LEVELS)?;
        let mut out = String::from("age,year");
        for l in QUANTILE_LEVELS {
            out.push_str(&format!(",q{l}"));
        }
        out.push('\n');
        for (age, year, qs) in rows {
            out.push_str(&format!("{age},{year}"));
            for q in qs {
                out.push_str(&format!(",{q}"));
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// One row per (age, year), one `q` column per path.
    pub fn write_paths_csv(&self, path: &Path) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::validation("scenario set is empty"));
        }
        let mut out = String::from("age,year");
        for p in 0..self.n_paths {
            out.push_str(&format!(",path_{p}"));
        }
        out.push('\n');
        for x in 0..self.n_ages {
            for t in 0..self.n_years {
                out.push_str(&format!("{},{}", self.age_min + x as u32, self.first_year + t as i32));
                for p in 0..self.n_paths {
                    out.push_str(&format!(",{}", self.q(x, t, p)));
                }
                out.push('\n');
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(56 + 8 * (self.n_ages + self.mu.len()) + self.n_paths);
        out.extend_from_slice(MAGIC);
        for v in [self.n_paths as u64, self.n_years as u64, self.n_ages as u64] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.first_year as i64).to_le_bytes());
        out.extend_from_slice(&(self.age_min as u64).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for v in self.anchor_mu.iter().chain(&self.mu) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend(self.unoffset.iter().map(|&f| f as u8));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::validation(format!("malformed scenario file: {m}"));
        if bytes.len() < 56 || &bytes[..8] != MAGIC {
            return Err(bad("missing header"));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap());
        let (n_paths, n_years, n_ages) = (word(0) as usize, word(1) as usize, word(2) as usize);
        let first_year = word(3) as i64 as i32;
        let age_min = word(4) as u32;
        let seed = word(5);
        let n_mu = n_paths
            .checked_mul(n_years)
            .and_then(|v| v.checked_mul(n_ages))
            .ok_or_else(|| bad("dimensions overflow"))?;
        if bytes.len() != 56 + 8 * (n_ages + n_mu) + n_paths {
            return Err(bad("length does not match dimensions"));
        }
        let floats: Vec<f64> = bytes[56..56 + 8 * (n_ages + n_mu)]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let unoffset = bytes[56 + 8 * (n_ages + n_mu)..].iter().map(|&b| b != 0).collect();
        Ok(Self {
            age_min,
            n_ages,
            first_year,
            n_years,
            n_paths,
            seed,
            anchor_mu: floats[..n_ages].to_vec(),
            mu: floats[n_ages..].to_vec(),
            unoffset,
        })
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        w.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
