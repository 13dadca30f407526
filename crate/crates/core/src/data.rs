//! Deaths/exposures ingestion, the aggregated common panel, and crude rates.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Age range and calendar-year range of a calibration window, both inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub age_min: u32,
    pub age_max: u32,
    pub year_min: i32,
    pub year_max: i32,
}

impl Window {
    pub fn new(age_min: u32, age_max: u32, year_min: i32, year_max: i32) -> Result<Self> {
        if age_min > age_max || year_min > year_max {
            return Err(Error::validation(format!(
                "empty window: ages {age_min}-{age_max}, years {year_min}-{year_max}"
            )));
        }
        Ok(Window {
            age_min,
            age_max,
            year_min,
            year_max,
        })
    }

    pub fn n_ages(&self) -> usize {
        (self.age_max - self.age_min + 1) as usize
    }

    pub fn n_years(&self) -> usize {
        (self.year_max - self.year_min + 1) as usize
    }

    pub fn contains(&self, age: u32, year: i32) -> bool {
        (self.age_min..=self.age_max).contains(&age) && (self.year_min..=self.year_max).contains(&year)
    }

    pub fn age_index(&self, age: u32) -> usize {
        (age - self.age_min) as usize
    }

    pub fn year_index(&self, year: i32) -> usize {
        (year - self.year_min) as usize
    }

    pub fn ages(&self) -> impl Iterator<Item = u32> {
        self.age_min..=self.age_max
    }

    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.year_min..=self.year_max
    }

    /// True when `other` lies inside `self`.
    pub fn covers(&self, other: &Window) -> bool {
        self.age_min <= other.age_min
            && other.age_max <= self.age_max
            && self.year_min <= other.year_min
            && other.year_max <= self.year_max
    }
}

/// Deaths and exposures of one country over a window. Matrices are indexed
/// `(age, year)` relative to the window origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountrySeries {
    pub country_code: String,
    pub window: Window,
    pub deaths: DMatrix<f64>,
    pub exposures: DMatrix<f64>,
    pub present: DMatrix<bool>,
    pub first_year_available: i32,
}

impl CountrySeries {
    /// Builds a fully observed series, checking the cell invariants.
    pub fn from_matrices(
        country_code: impl Into<String>,
        window: Window,
        deaths: DMatrix<f64>,
        exposures: DMatrix<f64>,
    ) -> Result<Self> {
        let shape = (window.n_ages(), window.n_years());
        if deaths.shape() != shape || exposures.shape() != shape {
            return Err(Error::validation(format!(
                "matrices must be {}x{} (ages x years)",
                shape.0, shape.1
            )));
        }
        let series = CountrySeries {
            country_code: country_code.into(),
            window,
            deaths,
            exposures,
            present: DMatrix::from_element(shape.0, shape.1, true),
            first_year_available: window.year_min,
        };
        series.validate()?;
        Ok(series)
    }

    fn validate(&self) -> Result<()> {
        for (i, age) in self.window.ages().enumerate() {
            for (j, year) in self.window.years().enumerate() {
                if !self.present[(i, j)] {
                    continue;
                }
                check_cell(self.deaths[(i, j)], self.exposures[(i, j)], year, age)?;
            }
        }
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.present.iter().all(|&p| p)
    }

    /// Crude central death rates `d / E`. Every cell must be present.
    pub fn crude_rates(&self) -> Result<DMatrix<f64>> {
        if let Some((i, j)) = first_missing(&self.present) {
            return Err(Error::validation(format!(
                "country {}: cell (year {}, age {}) is missing",
                self.country_code,
                self.window.year_min + j as i32,
                self.window.age_min + i as u32
            )));
        }
        crude_death_rates(&self.deaths, &self.exposures)
    }

    /// Restriction to a sub-window.
    pub fn restrict(&self, window: &Window) -> Result<CountrySeries> {
        if !self.window.covers(window) {
            return Err(Error::validation("restriction window is not inside the series window"));
        }
        let (r0, c0) = (self.window.age_index(window.age_min), self.window.year_index(window.year_min));
        let (nr, nc) = (window.n_ages(), window.n_years());
        Ok(CountrySeries {
            country_code: self.country_code.clone(),
            window: *window,
            deaths: self.deaths.view((r0, c0), (nr, nc)).into_owned(),
            exposures: self.exposures.view((r0, c0), (nr, nc)).into_owned(),
            present: self.present.view((r0, c0), (nr, nc)).into_owned(),
            first_year_available: self.first_year_available.max(window.year_min),
        })
    }
}

fn first_missing(present: &DMatrix<bool>) -> Option<(usize, usize)> {
    for j in 0..present.ncols() {
        for i in 0..present.nrows() {
            if !present[(i, j)] {
                return Some((i, j));
            }
        }
    }
    None
}

fn check_cell(deaths: f64, exposure: f64, year: i32, age: u32) -> Result<()> {
    if !deaths.is_finite() || deaths < 0.0 {
        return Err(Error::validation(format!(
            "negative or non-finite deaths {deaths} at (year {year}, age {age})"
        )));
    }
    if !exposure.is_finite() || exposure <= 0.0 {
        return Err(Error::validation(format!(
            "non-positive exposure {exposure} at (year {year}, age {age})"
        )));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct Row {
    #[serde(rename = "Year")]
    year: String,
    #[serde(rename = "Age")]
    age: String,
    #[serde(rename = "Deaths")]
    deaths: String,
    #[serde(rename = "Exposure")]
    exposure: String,
}

/// Reads a `Year,Age,Deaths,Exposure` CSV and keeps the rows inside `window`.
///
/// Open age intervals such as `110+` are rejected. Cells of the window that
/// do not appear in the file are marked missing.
pub fn load_country_table(path: &Path, country_code: &str, window: &Window) -> Result<CountrySeries> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let (na, ny) = (window.n_ages(), window.n_years());
    let mut deaths = DMatrix::zeros(na, ny);
    let mut exposures = DMatrix::zeros(na, ny);
    let mut present = DMatrix::from_element(na, ny, false);
    let mut first_year: Option<i32> = None;

    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = record.deserialize(Some(&headers)).map_err(|e| csv_error(path, e))?;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let year: i32 = row
            .year
            .parse()
            .map_err(|_| parse_err(format!("invalid year {:?}", row.year)))?;
        let age: u32 = row
            .age
            .parse()
            .map_err(|_| parse_err(format!("invalid or open-interval age {:?}", row.age)))?;
        let d: f64 = row
            .deaths
            .parse()
            .map_err(|_| parse_err(format!("invalid deaths {:?}", row.deaths)))?;
        let e: f64 = row
            .exposure
            .parse()
            .map_err(|_| parse_err(format!("invalid exposure {:?}", row.exposure)))?;
        check_cell(d, e, year, age)?;
        if !window.contains(age, year) {
            continue;
        }
        let (i, j) = (window.age_index(age), window.year_index(year));
        if present[(i, j)] {
            return Err(parse_err(format!("duplicate row for (year {year}, age {age})")));
        }
        deaths[(i, j)] = d;
        exposures[(i, j)] = e;
        present[(i, j)] = true;
        first_year = Some(first_year.map_or(year, |y| y.min(year)));
    }

    Ok(CountrySeries {
        country_code: country_code.to_string(),
        window: *window,
        deaths,
        exposures,
        present,
        first_year_available: first_year.unwrap_or(window.year_max + 1),
    })
}

/// Writes the observed cells of a series as a `Year,Age,Deaths,Exposure` CSV.
pub fn write_country_table(series: &CountrySeries, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["Year", "Age", "Deaths", "Exposure"]).map_err(|e| csv_error(path, e))?;
    for (j, year) in series.window.years().enumerate() {
        for (i, age) in series.window.ages().enumerate() {
            if !series.present[(i, j)] {
                continue;
            }
            let row = [
                year.to_string(),
                age.to_string(),
                series.deaths[(i, j)].to_string(),
                series.exposures[(i, j)].to_string(),
            ];
            w.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Per-country data plus the aggregated common panel with a time-varying
/// country composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MortalityPanel {
    pub window: Window,
    pub countries: Vec<CountrySeries>,
    pub common_deaths: DMatrix<f64>,
    pub common_exposures: DMatrix<f64>,
    pub composition: BTreeMap<i32, BTreeSet<String>>,
}

impl MortalityPanel {
    pub fn country(&self, code: &str) -> Option<&CountrySeries> {
        self.countries.iter().find(|c| c.country_code == code)
    }

    pub fn common_crude_rates(&self) -> Result<DMatrix<f64>> {
        crude_death_rates(&self.common_deaths, &self.common_exposures)
    }

    /// Rebuilds the panel on a sub-window with the same entry years.
    pub fn restrict(&self, window: &Window) -> Result<MortalityPanel> {
        let series = self
            .countries
            .iter()
            .map(|c| c.restrict(window))
            .collect::<Result<Vec<_>>>()?;
        let entry_years = self.entry_years();
        build_panel(&series, &entry_years, window)
    }

    /// Entry year of each country: the first year in which it is part of the
    /// composition (countries that never enter are omitted).
    pub fn entry_years(&self) -> BTreeMap<String, i32> {
        let mut out = BTreeMap::new();
        for (&year, set) in &self.composition {
            for code in set {
                out.entry(code.clone()).or_insert(year);
            }
        }
        out
    }
}

/// Aggregates countries into the common panel. A country contributes from
/// its entry year onward and must be fully observed from then on.
pub fn build_panel(
    series: &[CountrySeries],
    entry_years: &BTreeMap<String, i32>,
    window: &Window,
) -> Result<MortalityPanel> {
    if series.is_empty() {
        return Err(Error::validation("at least one country is required"));
    }
    let (na, ny) = (window.n_ages(), window.n_years());
    let mut countries = Vec::with_capacity(series.len());
    for s in series {
        let s = if s.window == *window { s.clone() } else { s.restrict(window)? };
        countries.push(s);
    }
    let mut seen = BTreeSet::new();
    for c in &countries {
        if !seen.insert(c.country_code.clone()) {
            return Err(Error::validation(format!("country {} listed twice", c.country_code)));
        }
        if !entry_years.contains_key(&c.country_code) {
            return Err(Error::validation(format!("no entry year for country {}", c.country_code)));
        }
    }

    let mut common_deaths = DMatrix::zeros(na, ny);
    let mut common_exposures = DMatrix::zeros(na, ny);
    let mut composition = BTreeMap::new();
    for (j, year) in window.years().enumerate() {
        let mut members = BTreeSet::new();
        for c in &countries {
            if entry_years[&c.country_code] > year {
                continue;
            }
            for (i, age) in window.ages().enumerate() {
                if !c.present[(i, j)] {
                    return Err(Error::validation(format!(
                        "country {}: cell (year {year}, age {age}) is missing inside its active window",
                        c.country_code
                    )));
                }
                common_deaths[(i, j)] += c.deaths[(i, j)];
                common_exposures[(i, j)] += c.exposures[(i, j)];
            }
            members.insert(c.country_code.clone());
        }
        if members.is_empty() {
            return Err(Error::validation(format!("no country is active in year {year}")));
        }
        composition.insert(year, members);
    }

    Ok(MortalityPanel {
        window: *window,
        countries,
        common_deaths,
        common_exposures,
        composition,
    })
}

/// Cellwise `d / E`; a non-positive exposure is an error, never an infinity.
pub fn crude_death_rates(deaths: &DMatrix<f64>, exposures: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if deaths.shape() != exposures.shape() {
        return Err(Error::validation("deaths and exposures have different shapes"));
    }
    let mut out = DMatrix::zeros(deaths.nrows(), deaths.ncols());
    for j in 0..deaths.ncols() {
        for i in 0..deaths.nrows() {
            let e = exposures[(i, j)];
            if !(e > 0.0) {
                return Err(Error::validation(format!(
                    "non-positive exposure at cell (age index {i}, year index {j})"
                )));
            }
            out[(i, j)] = deaths[(i, j)] / e;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_cells_and_marks_missing() {
        let f = write_csv("Year,Age,Deaths,Exposure\n2020,30,5,100\n2020,31,6,110\n2021,30,4,102\n");
        let w = Window::new(30, 31, 2020, 2021).unwrap();
        let s = load_country_table(f.path(), "XX", &w).unwrap();
        assert_eq!(s.deaths[(0, 0)], 5.0);
        assert_eq!(s.exposures[(1, 0)], 110.0);
        assert_eq!(s.deaths[(0, 1)], 4.0);
        assert!(!s.present[(1, 1)]);
        assert_eq!(s.present.iter().filter(|&&p| p).count(), 3);
        assert_eq!(s.first_year_available, 2020);
    }

    #[test]
    fn zero_exposure_names_the_cell() {
        let f = write_csv("Year,Age,Deaths,Exposure\n2020,30,5,100\n2021,31,1,0\n");
        let w = Window::new(30, 31, 2020, 2021).unwrap();
        let err = load_country_table(f.path(), "XX", &w).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Validation(_)));
        assert!(msg.contains("year 2021") && msg.contains("age 31"), "{msg}");
    }

    #[test]
    fn open_age_interval_is_a_parse_error_with_line() {
        let f = write_csv("Year,Age,Deaths,Exposure\n2020,30,5,100\n2020,110+,6,110\n");
        let w = Window::new(30, 31, 2020, 2020).unwrap();
        match load_country_table(f.path(), "XX", &w).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_deaths_rejected() {
        let f = write_csv("Year,Age,Deaths,Exposure\n2020,30,-1,100\n");
        let w = Window::new(30, 30, 2020, 2020).unwrap();
        assert!(matches!(load_country_table(f.path(), "XX", &w), Err(Error::Validation(_))));
    }

    fn full(code: &str, w: Window, d: f64, e: f64) -> CountrySeries {
        CountrySeries::from_matrices(
            code,
            w,
            DMatrix::from_element(w.n_ages(), w.n_years(), d),
            DMatrix::from_element(w.n_ages(), w.n_years(), e),
        )
        .unwrap()
    }

    #[test]
    fn late_entry_is_excluded_before_entry_year() {
        let w = Window::new(40, 41, 1898, 1901).unwrap();
        let a = full("A", w, 10.0, 1000.0);
        let b = full("B", w, 3.0, 200.0);
        let entry = BTreeMap::from([("A".to_string(), 1898), ("B".to_string(), 1900)]);
        let p = build_panel(&[a, b], &entry, &w).unwrap();
        assert_eq!(p.common_deaths[(0, w.year_index(1899))], 10.0);
        assert_eq!(p.common_deaths[(0, w.year_index(1900))], 13.0);
        assert_eq!(p.common_exposures[(1, w.year_index(1901))], 1200.0);
        assert_eq!(p.composition[&1899].len(), 1);
        assert_eq!(p.composition[&1900].len(), 2);
        assert_eq!(p.entry_years(), entry);
    }

    #[test]
    fn single_country_panel_is_identity() {
        let w = Window::new(40, 42, 2000, 2004).unwrap();
        let a = full("A", w, 7.0, 900.0);
        let p = build_panel(&[a.clone()], &BTreeMap::from([("A".into(), 2000)]), &w).unwrap();
        assert_eq!(p.common_deaths, a.deaths);
        assert_eq!(p.common_exposures, a.exposures);
    }

    #[test]
    fn missing_cell_in_active_window_is_an_error() {
        let w = Window::new(40, 41, 2000, 2002).unwrap();
        let mut a = full("A", w, 1.0, 10.0);
        a.present[(1, 2)] = false;
        let err = build_panel(&[a.clone()], &BTreeMap::from([("A".into(), 2000)]), &w).unwrap_err();
        assert!(err.to_string().contains("country A"));
        // a missing cell before the entry year is fine
        a.present[(1, 2)] = true;
        a.present[(0, 0)] = false;
        let b = full("B", w, 1.0, 10.0);
        let entry = BTreeMap::from([("A".into(), 2001), ("B".into(), 2000)]);
        assert!(build_panel(&[a, b], &entry, &w).is_ok());
    }

    #[test]
    fn crude_rates_examples() {
        let d = DMatrix::from_row_slice(1, 2, &[5.0, 0.0]);
        let e = DMatrix::from_row_slice(1, 2, &[100.0, 100.0]);
        let m = crude_death_rates(&d, &e).unwrap();
        assert_eq!(m[(0, 0)], 0.05);
        assert_eq!(m[(0, 1)], 0.0);
        let e0 = DMatrix::from_row_slice(1, 2, &[100.0, 0.0]);
        assert!(crude_death_rates(&d, &e0).is_err());
    }
}
