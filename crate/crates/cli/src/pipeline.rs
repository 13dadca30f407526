use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shockmort::baseline::io::{read_bundle, write_bundle};
use shockmort::baseline::{fit_baseline, to_improvement_form, BaselineParams};
use shockmort::data::{build_panel, load_country_table, MortalityPanel};
use shockmort::dynamics::{fit_weighted_gaussian, select_decay, PeriodDynParams};
use shockmort::outliers::{detect_from_period_effects, read_years_json};
use shockmort::projection::{most_probable_state, project_scenarios, GroupProjection, ProjectionModel, ScenarioSet};
use shockmort::regime::{compute_residuals, fit_regime, is_high_volatility, year_weights};
use shockmort::scr::{
    scr_runoff, scr_standard_annuity, scr_standard_term, write_report_csv, AnnuityContract, Contract, MortalitySurface,
    ScrRow, TermLifeContract,
};

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Baseline,
    Outliers,
    Rebaseline,
    Regime,
    Dynamics,
    Project,
    Scr,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Baseline,
        Stage::Outliers,
        Stage::Rebaseline,
        Stage::Regime,
        Stage::Dynamics,
        Stage::Project,
        Stage::Scr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Baseline => "baseline",
            Stage::Outliers => "outliers",
            Stage::Rebaseline => "rebaseline",
            Stage::Regime => "regime",
            Stage::Dynamics => "dynamics",
            Stage::Project => "project",
            Stage::Scr => "scr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| CliError::UnknownStage(s.to_string()))
    }

    /// Comma-separated list or `all`; returned in pipeline order.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        if s.trim() == "all" {
            return Ok(Stage::ALL.to_vec());
        }
        let mut out: Vec<Stage> = s.split(',').map(|p| Stage::parse(p.trim())).collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }
}

/// Artifact locations under the output directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn panel(&self) -> PathBuf {
        self.root.join("ingest/panel.json")
    }
    pub fn baseline(&self) -> PathBuf {
        self.root.join("baseline")
    }
    pub fn outlier_years(&self) -> PathBuf {
        self.root.join("outliers/years.json")
    }
    pub fn rebaseline(&self) -> PathBuf {
        self.root.join("rebaseline")
    }
    pub fn regime_groups(&self) -> PathBuf {
        self.root.join("regime/groups.json")
    }
    pub fn dynamics(&self) -> PathBuf {
        self.root.join("dynamics/params.json")
    }
    pub fn scenarios(&self) -> PathBuf {
        self.root.join("projection/scenarios.bin")
    }
    pub fn quantiles(&self) -> PathBuf {
        self.root.join("projection/quantiles.csv")
    }
    pub fn best_estimate(&self) -> PathBuf {
        self.root.join("projection/best_estimate.bin")
    }
    pub fn scr_report(&self) -> PathBuf {
        self.root.join("scr/report.csv")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("run_manifest.json")
    }
}

fn require(path: PathBuf, stage: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingArtifact { path, stage })
    }
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        mkdir(dir)?;
    }
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        shockmort::Error::Parse { path: path.to_path_buf(), line: e.line() as u64, message: e.to_string() }.into()
    })
}

/// Hashes and seeds of one run. Holds no timestamps, so identical inputs
/// give an identical file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub parallel: bool,
    pub config_sha256: String,
    pub stages: Vec<Stage>,
    pub seeds: BTreeMap<String, u64>,
    /// Every artifact under the output directory, by relative path.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_tree(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| CliError::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            hash_tree(root, &p, out)?;
        } else if p.file_name().is_some_and(|n| n != "run_manifest.json") {
            let bytes = fs::read(&p).map_err(|e| CliError::io(&p, e))?;
            let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            out.insert(rel, sha256_hex(&bytes));
        }
    }
    Ok(())
}

/// Run `stages` in pipeline order and write the run manifest.
pub fn run_pipeline(cfg: &PipelineConfig, stages: &[Stage]) -> Result<RunManifest> {
    let layout = Layout { root: cfg.output_dir.clone() };
    mkdir(&layout.root)?;
    let mut sorted = stages.to_vec();
    sorted.sort();
    sorted.dedup();
    for &stage in &sorted {
        match stage {
            Stage::Ingest => ingest(cfg, &layout)?,
            Stage::Baseline => baseline(cfg, &layout, false)?,
            Stage::Outliers => outliers(cfg, &layout)?,
            Stage::Rebaseline => baseline(cfg, &layout, true)?,
            Stage::Regime => regime(cfg, &layout)?,
            Stage::Dynamics => dynamics(cfg, &layout)?,
            Stage::Project => project(cfg, &layout)?,
            Stage::Scr => scr(cfg, &layout)?,
        }
    }
    let mut artifacts = BTreeMap::new();
    hash_tree(&layout.root, &layout.root, &mut artifacts)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        parallel: shockmort::par::is_parallel(),
        config_sha256: sha256_hex(serde_json::to_string(cfg).expect("config serializes").as_bytes()),
        stages: sorted,
        seeds: BTreeMap::from([
            ("mcd".to_string(), cfg.outliers.mcd.seed),
            ("regime".to_string(), cfg.regime.fit.seed),
            ("jde".to_string(), cfg.regime.fit.jde.seed),
            ("projection".to_string(), cfg.projection.config.seed),
        ]),
        artifacts,
    };
    write_json(&layout.manifest(), &manifest)?;
    Ok(manifest)
}

fn ingest(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let w = cfg.data.window;
    let mut series = Vec::new();
    let mut entry = BTreeMap::new();
    for c in &cfg.data.countries {
        let s = load_country_table(&c.path, &c.code, &w)?;
        entry.insert(c.code.clone(), c.entry_year.unwrap_or(s.first_year_available.max(w.year_min)));
        series.push(s);
    }
    let panel = build_panel(&series, &entry, &w)?;
    write_json(&layout.panel(), &panel)
}

fn load_panel(layout: &Layout) -> Result<MortalityPanel> {
    read_json(&require(layout.panel(), "ingest")?)
}

fn baseline(cfg: &PipelineConfig, layout: &Layout, refit: bool) -> Result<()> {
    let panel = load_panel(layout)?;
    let w = panel.window;
    let excluded: Vec<i32> = if refit {
        read_years_json(&require(layout.outlier_years(), "outliers")?)?.into_iter().collect()
    } else {
        Vec::new()
    };
    let active: Vec<bool> = w.years().map(|y| !excluded.contains(&y)).collect();
    let (params, common, deviation) = fit_baseline(&panel, &cfg.data.target, &active, &cfg.baseline)?;
    let dir = if refit { layout.rebaseline() } else { layout.baseline() };
    write_bundle(&dir, &params, &excluded)?;
    write_json(&dir.join("diagnostics.json"), &(common, deviation))
}

fn outliers(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let (params, _) = read_bundle(&require(layout.baseline(), "baseline")?)?;
    let years: Vec<i32> = params.window().years().skip(1).collect();
    let k = params.common.k();
    let (_, _, report) = detect_from_period_effects(&years, &k, &cfg.outliers)?;
    let dir = layout.root.join("outliers");
    mkdir(&dir)?;
    report.write_csv(&dir.join("report.csv"))?;
    report.write_years_json(&layout.outlier_years())?;
    Ok(())
}

fn load_rebaseline(layout: &Layout) -> Result<BaselineParams> {
    Ok(read_bundle(&require(layout.rebaseline(), "rebaseline")?)?.0)
}

fn regime(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let panel = load_panel(layout)?;
    let params = load_rebaseline(layout)?;
    let series = panel
        .country(&cfg.data.target)
        .ok_or_else(|| shockmort::Error::validation(format!("target {} not in panel", cfg.data.target)))?;
    let z = compute_residuals(series, &params)?;
    let dir = layout.root.join("regime");
    mkdir(&dir)?;
    z.write_csv(&dir.join("residuals.csv"))?;
    let ranges: Vec<(i32, i32, f64)> = cfg.regime.weights.iter().map(|w| (w.from, w.to, w.weight)).collect();
    let nu = year_weights(&z.years, &ranges)?;
    let mut groups = Vec::new();
    for g in &cfg.regime.groups {
        let fit = fit_regime(&z, g, &nu, &cfg.regime.fit)?;
        fit.params.write_loadings_csv(&dir.join(format!("{}_loadings.csv", g.name)))?;
        let gz = z.group(g)?;
        let probs = &fit.filter.filtered_probs;
        let init = *probs.last().expect("non-empty residual panel");
        // Observed high-volatility spell still open at the last year.
        let open = probs.iter().rev().take_while(|p| is_high_volatility(most_probable_state(p))).count();
        let carry = (open > 0).then(|| {
            let ny = gz.years.len();
            (0..gz.ages.len()).map(|x| (ny - open..ny).map(|t| gz.z[(x, t)]).sum()).collect()
        });
        groups.push(GroupProjection {
            group: g.clone(),
            params: fit.params,
            init,
            carry,
            forced: BTreeMap::new(),
        });
    }
    write_json(&layout.regime_groups(), &groups)
}

fn dynamics(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let params = load_rebaseline(layout)?;
    let w = *params.window();
    let (k, kappa) = to_improvement_form(&params);
    let cols: Vec<&Vec<f64>> = k.iter().chain(&kappa).collect();
    let ny = w.n_years() - 1;
    let stacked = DMatrix::from_fn(ny, cols.len(), |t, j| cols[j][t]);
    let years: Vec<i32> = w.years().skip(1).collect();
    let first_eval = cfg.dynamics.first_eval_year.unwrap_or(years[ny / 2]);
    let sel = select_decay(&stacked, &years, k.len(), &cfg.dynamics.gamma_grid, first_eval, cfg.dynamics.min_history)?;
    let fit = fit_weighted_gaussian(&stacked, k.len(), sel.gamma)?;
    let dir = layout.root.join("dynamics");
    mkdir(&dir)?;
    fit.write_json(&layout.dynamics())?;
    let mut scores = String::from("gamma,score\n");
    for (g, s) in &sel.scores {
        scores.push_str(&format!("{g},{s:?}\n"));
    }
    fs::write(dir.join("decay_scores.csv"), scores).map_err(|e| CliError::io(dir.join("decay_scores.csv"), e))
}

fn projection_model(cfg: &PipelineConfig, layout: &Layout) -> Result<ProjectionModel> {
    let panel = load_panel(layout)?;
    let params = load_rebaseline(layout)?;
    let dynamics = PeriodDynParams::read_json(&require(layout.dynamics(), "dynamics")?)?;
    let mut groups: Vec<GroupProjection> = read_json(&require(layout.regime_groups(), "regime")?)?;
    for g in &mut groups {
        g.forced = cfg.projection.forced.get(&g.group.name).cloned().unwrap_or_default();
    }
    let series = panel
        .country(&cfg.data.target)
        .ok_or_else(|| shockmort::Error::validation(format!("target {} not in panel", cfg.data.target)))?;
    let rates = series.crude_rates()?;
    let anchor = DVector::from_iterator(rates.nrows(), rates.column(rates.ncols() - 1).iter().copied());
    Ok(ProjectionModel::new(&params, dynamics, groups, anchor)?)
}

fn project(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let model = projection_model(cfg, layout)?;
    let set = project_scenarios(&model, &cfg.projection.config)?;
    mkdir(&layout.root.join("projection"))?;
    set.write_binary(&layout.scenarios())?;
    set.write_quantile_csv(&layout.quantiles())?;
    model.best_estimate(cfg.projection.config.n_years).write_binary(&layout.best_estimate())?;
    Ok(())
}

fn scr(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let set = ScenarioSet::read_binary(&require(layout.scenarios(), "project")?)?;
    let best = ScenarioSet::read_binary(&require(layout.best_estimate(), "project")?)?;
    let closing = &cfg.scr.closing;
    let best = MortalitySurface::from_scenario(&best, 0, closing)?;
    let issue_year = cfg.scr.issue_year.unwrap_or(set.first_year - 1);
    let mut rows = Vec::new();
    for &age in &cfg.scr.annuity_ages {
        let c = AnnuityContract { issue_age: age, issue_year, ..cfg.scr.annuity };
        c.validate()?;
        let runoff = scr_runoff(&c, &set, &best, closing)?;
        rows.push(ScrRow {
            product: "annuity".into(),
            issue_age: age,
            bel0: c.bel(&best)?,
            scr_standard: scr_standard_annuity(&c, &best)?,
            scr_runoff: runoff.scr,
            scr_mortality: 0.0,
            scr_catastrophe: 0.0,
        });
    }
    for &age in &cfg.scr.term_ages {
        let c = TermLifeContract { issue_age: age, issue_year, ..cfg.scr.term };
        c.validate()?;
        let runoff = scr_runoff(&c, &set, &best, closing)?;
        let std = scr_standard_term(&c, &best)?;
        rows.push(ScrRow {
            product: "term".into(),
            issue_age: age,
            bel0: c.bel(&best)?,
            scr_standard: std.total,
            scr_runoff: runoff.scr,
            scr_mortality: std.mortality,
            scr_catastrophe: std.catastrophe,
        });
    }
    mkdir(&layout.root.join("scr"))?;
    write_report_csv(&rows, &layout.scr_report())?;
    Ok(())
}
