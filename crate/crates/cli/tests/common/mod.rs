#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use shockmort::data::{write_country_table, Window};
use shockmort::synthetic::{panel_fixture, FixtureConfig};

/// Writes the synthetic three-country panel and a pipeline config under
/// `dir`; returns the config path.
pub fn write_fixture(dir: &Path, ages: (u32, u32), n_paths: usize, n_years: usize) -> PathBuf {
    let mut fc = FixtureConfig::three_country(7);
    fc.window = Window::new(ages.0, ages.1, 1980, 2019).unwrap();
    let fixture = panel_fixture(&fc).unwrap();
    let mut countries = Vec::new();
    for s in &fixture.countries {
        let file = format!("{}.csv", s.country_code.to_lowercase());
        write_country_table(s, &dir.join(&file)).unwrap();
        countries.push(serde_json::json!({
            "code": s.country_code,
            "path": file,
            "entry_year": fixture.entry_years[&s.country_code],
        }));
    }
    let mid = (ages.0 + ages.1) / 2;
    let cfg = serde_json::json!({
        "output_dir": "out",
        "data": {
            "window": {"age_min": ages.0, "age_max": ages.1, "year_min": 1980, "year_max": 2019},
            "target": "AAA",
            "countries": countries,
        },
        "outliers": {"epoch_split_year": null, "prior_exclusions": [], "mcd": {"trials": 200}},
        "regime": {
            "groups": [
                {"name": "young", "age_min": ages.0, "age_max": mid},
                {"name": "old", "age_min": mid + 1, "age_max": ages.1},
            ],
            "fit": {"epoch_year": 1900, "min_years": 20, "max_rounds": 4, "jde": {"max_generations": 300}},
        },
        "dynamics": {"first_eval_year": 2000},
        "projection": {
            "n_years": n_years,
            "n_paths": n_paths,
            "seed": 42,
            "forced": {"old": {"2020": "high", "2021": "low"}},
        },
        "scr": {"annuity_ages": [65, 75], "term_ages": [ages.0, ages.0 + 2], "term": {"terminal_age": 65}},
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}
