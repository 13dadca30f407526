use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shockmort::baseline::FitConfig;
use shockmort::data::Window;
use shockmort::dynamics::default_decay_grid;
use shockmort::outliers::OutlierConfig;
use shockmort::projection::{ProjectionConfig, Regime};
use shockmort::regime::{AgeGroup, RegimeConfig};
use shockmort::scr::{AnnuityContract, Closing, TermLifeContract};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Relative paths resolve against the config file's directory.
    pub output_dir: PathBuf,
    pub data: DataSection,
    #[serde(default)]
    pub baseline: FitConfig,
    #[serde(default)]
    pub outliers: OutlierConfig,
    pub regime: RegimeSection,
    #[serde(default)]
    pub dynamics: DynamicsSection,
    #[serde(default)]
    pub projection: ProjectionSection,
    #[serde(default)]
    pub scr: ScrSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    pub window: Window,
    pub target: String,
    pub countries: Vec<CountryInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryInput {
    pub code: String,
    /// `Year,Age,Deaths,Exposure` table.
    pub path: PathBuf,
    /// First year the country joins the common panel; defaults to its
    /// first available year.
    #[serde(default)]
    pub entry_year: Option<i32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YearWeight {
    pub from: i32,
    pub to: i32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSection {
    pub groups: Vec<AgeGroup>,
    /// Likelihood weights for year ranges; other years weigh 1.
    #[serde(default)]
    pub weights: Vec<YearWeight>,
    #[serde(default)]
    pub fit: RegimeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsSection {
    pub gamma_grid: Vec<f64>,
    /// First year scored by the one-step-ahead criterion; defaults to the
    /// middle of the window.
    pub first_eval_year: Option<i32>,
    pub min_history: usize,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        Self { gamma_grid: default_decay_grid(), first_eval_year: None, min_history: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionSection {
    #[serde(flatten)]
    pub config: ProjectionConfig,
    /// Age-group name → year → imposed regime.
    pub forced: BTreeMap<String, BTreeMap<i32, Regime>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScrSection {
    /// Contract issue year; defaults to the last observed year.
    pub issue_year: Option<i32>,
    pub annuity: AnnuityContract,
    pub annuity_ages: Vec<u32>,
    pub term: TermLifeContract,
    pub term_ages: Vec<u32>,
    pub closing: Closing,
}

impl Default for ScrSection {
    fn default() -> Self {
        Self {
            issue_year: None,
            annuity: AnnuityContract::default(),
            annuity_ages: vec![55, 65, 75],
            term: TermLifeContract::default(),
            term_ages: vec![30, 40, 50],
            closing: Closing::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config { path: path.to_path_buf(), message: e.to_string() })
    }

    /// Read, resolve relative paths and validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_json(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate(path)?;
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for c in &mut self.data.countries {
            fix(&mut c.path);
        }
    }

    pub fn validate(&self, path: &Path) -> Result<()> {
        let err = |message: String| CliError::Config { path: path.to_path_buf(), message };
        if !self.data.countries.iter().any(|c| c.code == self.data.target) {
            return Err(err(format!("target {} is not among the countries", self.data.target)));
        }
        for c in &self.data.countries {
            if !c.path.exists() {
                return Err(err(format!("data file {} does not exist", c.path.display())));
            }
        }
        let w = self.data.window;
        let mut groups = self.regime.groups.clone();
        groups.sort_by_key(|g| g.age_min);
        let mut next = w.age_min;
        for g in &groups {
            if g.age_min != next || g.age_max < g.age_min {
                return Err(err(format!("age groups must cover ages {}-{} without gaps or overlaps", w.age_min, w.age_max)));
            }
            next = g.age_max + 1;
        }
        if next != w.age_max + 1 {
            return Err(err(format!("age groups must cover ages {}-{} without gaps or overlaps", w.age_min, w.age_max)));
        }
        for name in self.projection.forced.keys() {
            if !self.regime.groups.iter().any(|g| &g.name == name) {
                return Err(err(format!("forced states name unknown age group {name}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "output_dir": "out",
        "data": {
            "window": {"age_min": 60, "age_max": 69, "year_min": 1980, "year_max": 2019},
            "target": "AAA",
            "countries": [{"code": "AAA", "path": "aaa.csv"}]
        },
        "regime": {"groups": [{"name": "all", "age_min": 60, "age_max": 69}]},
        "projection": {"n_paths": 100, "forced": {"all": {"2020": "high", "2021": "low"}}}
    }"#;

    #[test]
    fn round_trip_is_identity() {
        let cfg = PipelineConfig::from_json(MINIMAL, Path::new("c.json")).unwrap();
        assert_eq!(cfg.projection.config.n_paths, 100);
        assert_eq!(cfg.projection.forced["all"][&2020], Regime::High);
        let text = serde_json::to_string(&cfg).unwrap();
        let back = PipelineConfig::from_json(&text, Path::new("c.json")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partition_gaps_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("aaa.csv"), "Year,Age,Deaths,Exposure\n").unwrap();
        let mut cfg = PipelineConfig::from_json(MINIMAL, Path::new("c.json")).unwrap();
        cfg.resolve(dir.path());
        cfg.validate(Path::new("c.json")).unwrap();
        cfg.regime.groups = vec![AgeGroup::new(60, 64), AgeGroup::new(66, 69)];
        assert!(cfg.validate(Path::new("c.json")).is_err());
    }
}
