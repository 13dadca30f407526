//! CSV bundle of fitted baseline parameters plus a JSON manifest.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{BaselineParams, CommonTrendParams, ConstraintResiduals, CountryDeviationParams};
use crate::data::Window;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub window: Window,
    pub country_code: String,
    pub m: usize,
    pub l: usize,
    pub anchor_common: Vec<f64>,
    pub anchor_country: Vec<f64>,
    pub common_constraints: ConstraintResiduals,
    pub deviation_constraints: ConstraintResiduals,
    /// Years excluded from the likelihood (imputed).
    pub excluded_years: Vec<i32>,
}

fn write_series(path: &Path, key: &str, index: impl Iterator<Item = i64>, values: &[f64]) -> Result<()> {
    let mut out = format!("{key},value\n");
    for (i, v) in index.zip(values) {
        out.push_str(&format!("{i},{v:?}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_series(path: &Path, expected: usize) -> Result<DVector<f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let parse = |message: String| Error::Parse { path: path.to_path_buf(), line: i as u64 + 2, message };
        let rec = rec.map_err(|e| parse(e.to_string()))?;
        let v = rec.get(1).ok_or_else(|| parse("missing value column".into()))?;
        values.push(v.trim().parse::<f64>().map_err(|_| parse(format!("invalid value {v:?}")))?);
    }
    if values.len() != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("expected {expected} rows, found {}", values.len()),
        });
    }
    Ok(DVector::from_vec(values))
}

/// Write `A.csv`, `B<i>.csv`, `L<i>.csv`, `K<i>.csv`, `beta<j>.csv`,
/// `lambda<j>.csv`, `kappa<j>.csv` and `manifest.json` into `dir`.
pub fn write_bundle(dir: &Path, params: &BaselineParams, excluded_years: &[i32]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let w = *params.window();
    let ages = || w.ages().map(i64::from);
    let years = || w.years().map(i64::from);
    write_series(&dir.join("A.csv"), "age", ages(), params.common.a.as_slice())?;
    for (i, (b, l)) in params.common.b.iter().zip(&params.common.l).enumerate() {
        write_series(&dir.join(format!("B{}.csv", i + 1)), "age", ages(), b.as_slice())?;
        write_series(&dir.join(format!("L{}.csv", i + 1)), "year", years(), l.as_slice())?;
    }
    for (i, k) in params.common.k().iter().enumerate() {
        write_series(&dir.join(format!("K{}.csv", i + 1)), "year", years().skip(1), k)?;
    }
    for (j, (b, l)) in params.deviation.beta.iter().zip(&params.deviation.lambda).enumerate() {
        write_series(&dir.join(format!("beta{}.csv", j + 1)), "age", ages(), b.as_slice())?;
        write_series(&dir.join(format!("lambda{}.csv", j + 1)), "year", years(), l.as_slice())?;
    }
    for (j, k) in params.deviation.kappa().iter().enumerate() {
        write_series(&dir.join(format!("kappa{}.csv", j + 1)), "year", years().skip(1), k)?;
    }
    let manifest = BundleManifest {
        window: w,
        country_code: params.deviation.country_code.clone(),
        m: params.common.m(),
        l: params.deviation.l(),
        anchor_common: params.anchor_common.as_slice().to_vec(),
        anchor_country: params.anchor_country.as_slice().to_vec(),
        common_constraints: params.common.constraint_residuals(),
        deviation_constraints: params.deviation.constraint_residuals(),
        excluded_years: excluded_years.to_vec(),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::validation(e.to_string()))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Read a bundle written by [`write_bundle`].
pub fn read_bundle(dir: &Path) -> Result<(BaselineParams, BundleManifest)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: BundleManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    let w = manifest.window;
    let (na, ny) = (w.n_ages(), w.n_years());
    let a = read_series(&dir.join("A.csv"), na)?;
    let mut b = Vec::new();
    let mut l = Vec::new();
    for i in 1..=manifest.m {
        b.push(read_series(&dir.join(format!("B{i}.csv")), na)?);
        l.push(read_series(&dir.join(format!("L{i}.csv")), ny)?);
    }
    let mut beta = Vec::new();
    let mut lambda = Vec::new();
    for j in 1..=manifest.l {
        beta.push(read_series(&dir.join(format!("beta{j}.csv")), na)?);
        lambda.push(read_series(&dir.join(format!("lambda{j}.csv")), ny)?);
    }
    if manifest.anchor_common.len() != na || manifest.anchor_country.len() != na {
        return Err(Error::validation("manifest anchors do not match the age range"));
    }
    let params = BaselineParams {
        common: CommonTrendParams { window: w, a, b, l },
        deviation: CountryDeviationParams { country_code: manifest.country_code.clone(), beta, lambda },
        anchor_common: DVector::from_vec(manifest.anchor_common.clone()),
        anchor_country: DVector::from_vec(manifest.anchor_country.clone()),
    };
    Ok((params, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundle_round_trip_is_exact() {
        let w = Window::new(60, 62, 2000, 2003).unwrap();
        let params = BaselineParams {
            common: CommonTrendParams {
                window: w,
                a: DVector::from_vec(vec![-0.01, -0.02, 0.1 / 3.0]),
                b: vec![DVector::from_vec(vec![0.6, 0.8, 0.0]), DVector::from_vec(vec![0.0, 0.0, 1.0])],
                l: vec![
                    DVector::from_vec(vec![0.0, 0.1, -0.3, 0.0]),
                    DVector::from_vec(vec![0.0, 1e-17, 2.0, 0.0]),
                ],
            },
            deviation: CountryDeviationParams {
                country_code: "NLD".into(),
                beta: vec![DVector::from_vec(vec![1.0, 0.0, 0.0])],
                lambda: vec![DVector::from_vec(vec![0.0, 0.5, 0.25, std::f64::consts::PI])],
            },
            anchor_common: DVector::from_vec(vec![-5.0, -4.9, -4.8]),
            anchor_country: DVector::from_vec(vec![-5.1, -4.95, -4.7]),
        };
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), &params, &[2001]).unwrap();
        let (back, manifest) = read_bundle(dir.path()).unwrap();
        assert_eq!(back, params);
        assert_eq!(manifest.excluded_years, vec![2001]);
        let k1 = fs::read_to_string(dir.path().join("K1.csv")).unwrap();
        assert!(k1.starts_with("year,value\n2001,"));
    }
}
