//! Pipeline driver: configuration, stages and scenario export.

pub mod config;
pub mod error;
pub mod export;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::{CliError, Result};
pub use export::{export_scenarios, ExportFormat};
pub use pipeline::{run_pipeline, RunManifest, Stage};

/// Size the global thread pool from `SHOCKMORT_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("SHOCKMORT_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().map_err(|_| CliError::Usage(format!("SHOCKMORT_THREADS={v} is not a thread count")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}
