use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shockmort_cli::{export_scenarios, init_threads, run_pipeline, CliError, ExportFormat, PipelineConfig, Stage};

/// Regime-switching mortality shocks: fit, project and value.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run pipeline stages.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated stages or `all`.
        #[arg(long, default_value = "all")]
        stages: String,
    },
    /// Convert a scenario file to CSV.
    Export {
        #[arg(long)]
        input: PathBuf,
        /// `csv` or `quantile-summary`.
        #[arg(long)]
        format: String,
        /// Defaults to the input path with a `.csv` extension.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Run { config, stages } => {
            let cfg = PipelineConfig::load(&config)?;
            let stages = Stage::parse_list(&stages)?;
            let manifest = run_pipeline(&cfg, &stages)?;
            println!("{} artifacts written to {}", manifest.artifacts.len(), cfg.output_dir.display());
        }
        Command::Export { input, format, output } => {
            let format = ExportFormat::parse(&format)?;
            let output = output.unwrap_or_else(|| input.with_extension("csv"));
            export_scenarios(&input, format, &output)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
