use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mf3net::harness::{self, ExperimentConfig, Task};
use mf3net::Error;

/// Three-layer network vs mean-field experiments.
#[derive(Parser, Debug)]
#[command(name = "mf3net", version)]
struct Cli {
    /// train | mf | couple | sweep_n | sweep_eps | convergence | crossval | plot
    task: String,
    /// Flat key = value config file (see docs/config.md).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out` in the config; default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps; MF3NET_WORKERS takes precedence.
    #[arg(long)]
    workers: Option<usize>,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_ASSERTION: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Validation(_) | Error::Parse { .. } => EXIT_VALIDATION,
        Error::Assertion(_) => EXIT_ASSERTION,
        _ => EXIT_FAILURE,
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let task: Task = cli.task.parse()?;
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", cli.config.display())))?;
    let mut cfg = ExperimentConfig::parse(task, &text)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.output_dir.get_or_insert_with(|| PathBuf::from("out"));
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    if let Ok(v) = std::env::var("MF3NET_WORKERS") {
        let w = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("MF3NET_WORKERS must be a positive integer, got `{v}`")))?;
        cfg.workers = Some(w);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load(&cli).and_then(|cfg| harness::run(&cfg));
    match result {
        Ok(outcome) => {
            for l in &outcome.lines {
                println!("{l}");
            }
            if outcome.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                for f in &outcome.failures {
                    eprintln!("FAIL: {f}");
                }
                ExitCode::from(EXIT_ASSERTION)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
