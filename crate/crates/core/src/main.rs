use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use ar1_fpt::config::{read_config_file, Overrides, RunConfig};
use ar1_fpt::run::{run_subcommand, Subcommand};
use ar1_fpt::FptError;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Phi,
    Simulate,
    Bounds,
    IdentityCheck,
    Certificate,
    Validate,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Phi => Subcommand::Phi,
            Command::Simulate => Subcommand::Simulate,
            Command::Bounds => Subcommand::Bounds,
            Command::IdentityCheck => Subcommand::IdentityCheck,
            Command::Certificate => Subcommand::Certificate,
            Command::Validate => Subcommand::Validate,
        }
    }
}

/// First-passage analysis for AR(1) sequences.
#[derive(Debug, Parser)]
#[command(name = "fpt", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json and tables.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    rel_tol: Option<f64>,
    /// `LO:HI:STEP`.
    #[arg(long)]
    u_grid: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    /// Innovation cap for the upper bound.
    #[arg(long)]
    cap: Option<f64>,
}

fn init_threads() -> Result<(), FptError> {
    let Ok(s) = std::env::var("FPT_THREADS") else { return Ok(()) };
    let n: usize = s.parse().map_err(|_| FptError::Config {
        path: "FPT_THREADS".into(),
        message: format!("`{s}` is not a thread count"),
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| FptError::Config { path: "FPT_THREADS".into(), message: e.to_string() })
}

fn run(cli: Cli) -> Result<(), FptError> {
    init_threads()?;
    let file = read_config_file(&cli.config)?;
    let flags = Overrides {
        seed: cli.seed,
        paths: cli.paths,
        max_steps: cli.max_steps,
        rel_tol: cli.rel_tol,
        u_grid: cli.u_grid,
        delta: cli.delta,
        cap: cli.cap,
    };
    let cfg = RunConfig::resolve(file, &flags)?;
    let report = run_subcommand(&cfg, cli.command.into(), &cli.out)?;
    println!("{}", cli.out.join(ar1_fpt::run::REPORT_FILE).display());
    if report.subcommand == "identity-check" {
        let r = &report.result;
        println!(
            "identity {} vs simulated {}: discrepancy {} ({} combined standard errors)",
            r["identity"]["value"], r["e_tau_hat"]["value"], r["discrepancy"], r["discrepancy_in_std_errs"]
        );
    }
    eprintln!("{} finished in {:.3}s", report.subcommand, report.wall_clock_seconds);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({"category": e.category(), "message": e.to_string()});
            eprintln!("{body}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
