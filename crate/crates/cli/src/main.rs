use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trefftz_cli::{run, run_conditioning, sample_field, ConfigError, RunConfig, RunError};

#[derive(Parser)]
#[command(name = "trefftz", version, about = "Trefftz finite element studies for the 2D Helmholtz equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the schedule and write the study CSV (stdout if no study_csv is set).
    Solve { config: PathBuf },
    /// Run the [sweep] section and write the conditioning CSV.
    Sweep { config: PathBuf },
    /// Solve, then write the sampled field of the last schedule entry.
    Sample { config: PathBuf },
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), RunError> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| RunError::Io(format!("{}: {e}", dir.display())))?;
            }
            std::fs::write(p, text).map_err(|e| RunError::Io(format!("{}: {e}", p.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn configure_threads() -> Result<(), RunError> {
    let Ok(v) = std::env::var("TREFFTZ_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| ConfigError { line: None, msg: format!("TREFFTZ_THREADS must be a positive integer, got '{v}'") })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| RunError::Io(e.to_string()))
}

fn execute(cli: Cli) -> Result<(), RunError> {
    configure_threads()?;
    match cli.command {
        Command::Solve { config } => {
            let cfg = RunConfig::from_file(&config)?;
            let report = run(&cfg)?;
            write_out(cfg.output.study_csv.as_deref(), &report.csv())?;
            if let (Some(path), Some(last)) = (&cfg.output.field_csv, &report.last) {
                write_out(Some(path), &sample_field(last, cfg.output.field_nx, cfg.output.field_ny)?)?;
            }
        }
        Command::Sweep { config } => {
            let cfg = RunConfig::from_file(&config)?;
            write_out(cfg.output.conditioning_csv.as_deref(), &run_conditioning(&cfg)?)?;
        }
        Command::Sample { config } => {
            let cfg = RunConfig::from_file(&config)?;
            let report = run(&cfg)?;
            let last = report.last.as_ref().expect("schedule has at least one entry");
            write_out(cfg.output.field_csv.as_deref(), &sample_field(last, cfg.output.field_nx, cfg.output.field_ny)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("trefftz: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
