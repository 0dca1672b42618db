use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use dphase::cli_report::{run, RawConfig, EXIT_CONFIG};
use dphase::Error;

/// Double-phase Dirichlet solver with p -> 1 continuation.
#[derive(Debug, Parser)]
#[command(name = "dphase", version)]
struct Cli {
    /// Flat `key = value` configuration file.
    config: PathBuf,
    /// Replace or add a key, e.g. `--override exponents.k_max=6`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn load(cli: &Cli) -> Result<dphase::cli_report::RunConfig, Error> {
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|source| Error::Io { path: cli.config.display().to_string(), source })?;
    let mut raw = RawConfig::parse(&text)?;
    for pair in &cli.overrides {
        raw.apply_override(pair)?;
    }
    raw.build()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let result = load(&cli).and_then(|cfg| run(&cfg));
    match result {
        Ok(summary) => {
            let verdict = summary
                .certificate
                .as_ref()
                .map(|c| format!(" verdict={:?}", c.verdict).to_lowercase())
                .unwrap_or_default();
            println!(
                "mode={} steps={}{} exit={} wall={:.3}s",
                summary.mode.name(),
                summary.steps.len(),
                verdict,
                summary.exit_code,
                start.elapsed().as_secs_f64()
            );
            ExitCode::from(summary.exit_code as u8)
        }
        Err(e) => {
            eprintln!("dphase: {e}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
    }
}
