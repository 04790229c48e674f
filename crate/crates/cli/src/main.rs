use clap::{Args, Parser, Subcommand};
use kernel_cblb::commands::{run, CliError};
use kernel_cblb::config::{CommandKind, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "kernel-cblb",
    version,
    about = "Bag-of-little-bootstraps confidence intervals for kernel causal estimators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Coverage experiment on a synthetic design
    Simulate(RunArgs),
    /// Wall-time comparison against the full bootstrap
    Timing(RunArgs),
    /// Interval for one estimator on a CSV dataset
    Analyze(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Bag-level worker threads (defaults: all cores, except 1 for timing)
    #[arg(long)]
    workers: Option<usize>,
    /// Where to write output CSVs (overrides the config)
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn command_name(kind: CommandKind) -> &'static str {
    match kind {
        CommandKind::Simulate => "simulate",
        CommandKind::Timing => "timing",
        CommandKind::Analyze => "analyze",
    }
}

fn real_main() -> Result<(), CliError> {
    let cli = Cli::parse();
    let (expected, args) = match &cli.command {
        Command::Simulate(a) => (CommandKind::Simulate, a),
        Command::Timing(a) => (CommandKind::Timing, a),
        Command::Analyze(a) => (CommandKind::Analyze, a),
    };
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let cfg = RunConfig::from_json(&text).map_err(CliError::Config)?;
    if cfg.command != expected {
        return Err(CliError::Config(format!(
            "config declares command {} but the {} subcommand was invoked",
            command_name(cfg.command),
            command_name(expected)
        )));
    }
    let outcome = run(&cfg, args.workers, args.output_dir.as_deref())?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    for f in &outcome.files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
