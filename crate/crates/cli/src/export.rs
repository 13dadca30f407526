use std::path::Path;

use shockmort::projection::ScenarioSet;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    /// One `q` column per path.
    Csv,
    QuantileSummary,
}

impl ExportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "quantile-summary" => Ok(ExportFormat::QuantileSummary),
            other => Err(CliError::UnknownFormat(other.to_string())),
        }
    }
}

/// Convert a binary scenario file to `output`.
pub fn export_scenarios(input: &Path, format: ExportFormat, output: &Path) -> Result<()> {
    if !input.exists() {
        return Err(CliError::MissingArtifact { path: input.to_path_buf(), stage: "project" });
    }
    let set = ScenarioSet::read_binary(input)?;
    match format {
        ExportFormat::Csv => set.write_paths_csv(output)?,
        ExportFormat::QuantileSummary => set.write_quantile_csv(output)?,
    }
    Ok(())
}
