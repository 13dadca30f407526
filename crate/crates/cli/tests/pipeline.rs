mod common;

use std::fs;
use std::process::Command;

use shockmort::projection::ScenarioSet;
use shockmort_cli::{export_scenarios, run_pipeline, CliError, ExportFormat, PipelineConfig, Stage};

#[test]
fn ingest_writes_panel() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::load(&common::write_fixture(dir.path(), (60, 69), 1000, 55)).unwrap();
    let manifest = run_pipeline(&cfg, &[Stage::Ingest]).unwrap();
    assert!(dir.path().join("out/ingest/panel.json").exists());
    assert!(manifest.artifacts.contains_key("ingest/panel.json"));
}

#[test]
fn missing_upstream_names_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::load(&common::write_fixture(dir.path(), (60, 69), 1000, 55)).unwrap();
    match run_pipeline(&cfg, &[Stage::Regime]) {
        Err(CliError::MissingArtifact { stage, .. }) => assert_eq!(stage, "ingest"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn full_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::load(&common::write_fixture(dir.path(), (60, 69), 1000, 55)).unwrap();
    let first = run_pipeline(&cfg, &Stage::ALL).unwrap();
    let manifest_bytes = fs::read(dir.path().join("out/run_manifest.json")).unwrap();

    let years: Vec<i32> = serde_json::from_str(&fs::read_to_string(dir.path().join("out/outliers/years.json")).unwrap()).unwrap();
    assert!(years.contains(&1992) && years.contains(&2008), "{years:?}");

    let report = fs::read_to_string(dir.path().join("out/scr/report.csv")).unwrap();
    for line in report.lines().skip(1) {
        let f: Vec<f64> = line.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
        assert!(f.iter().all(|v| v.is_finite() && *v >= 0.0), "{line}");
    }

    let set = ScenarioSet::read_binary(&dir.path().join("out/projection/scenarios.bin")).unwrap();
    assert_eq!((set.n_paths, set.n_years, set.n_ages), (1000, 55, 10));
    assert!(set.mu.iter().all(|m| *m > 0.0 && m.is_finite()));

    let second = run_pipeline(&cfg, &Stage::ALL).unwrap();
    assert_eq!(first, second);
    assert_eq!(manifest_bytes, fs::read(dir.path().join("out/run_manifest.json")).unwrap());
}

fn toy_set() -> ScenarioSet {
    ScenarioSet {
        age_min: 60,
        n_ages: 2,
        first_year: 2020,
        n_years: 2,
        n_paths: 2,
        seed: 0,
        anchor_mu: vec![0.01, 0.02],
        mu: vec![0.01, 0.02, 0.011, 0.021, 0.012, 0.022, 0.013, 0.023],
        unoffset: vec![false, false],
    }
}

#[test]
fn export_formats() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("s.bin");
    toy_set().write_binary(&input).unwrap();
    let out = dir.path().join("paths.csv");
    export_scenarios(&input, ExportFormat::Csv, &out).unwrap();
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), "age,year,path_0,path_1");
    assert_eq!(text.lines().count(), 5);
    assert!(matches!(ExportFormat::parse("parquet"), Err(CliError::UnknownFormat(_))));

    let empty = ScenarioSet { n_paths: 0, mu: vec![], unoffset: vec![], ..toy_set() };
    empty.write_binary(&input).unwrap();
    assert!(export_scenarios(&input, ExportFormat::QuantileSummary, &out).is_err());
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("s.bin");
    toy_set().write_binary(&input).unwrap();
    let bin = env!("CARGO_BIN_EXE_shockmort");
    let ok = Command::new(bin)
        .args(["export", "--input", input.to_str().unwrap(), "--format", "quantile-summary"])
        .status()
        .unwrap();
    assert_eq!(ok.code(), Some(0));
    assert!(dir.path().join("s.csv").exists());
    let bad = Command::new(bin)
        .args(["export", "--input", input.to_str().unwrap(), "--format", "xml"])
        .status()
        .unwrap();
    assert_eq!(bad.code(), Some(1));
    let missing = Command::new(bin).args(["run", "--config", "/nonexistent.json"]).status().unwrap();
    assert_eq!(missing.code(), Some(1));
}
