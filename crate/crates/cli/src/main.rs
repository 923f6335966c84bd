use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdot_cli::config::RunConfig;
use sdot_cli::runner::{execute, CommandKind};

/// Semi-discrete optimal transport solver.
#[derive(Parser)]
#[command(name = "sdot", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in experiment preset, e.g. square-trig-l0.2.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Maximize the dual once and extract partitions and the plan.
    Solve(RunArgs),
    /// Alternate dual solves with center updates, then extract.
    Refine(RunArgs),
    /// Solve the hedonic market variant with the opt-out option.
    Hedonic(RunArgs),
    /// Compare the solver against the exact small-instance optimum.
    Exact(RunArgs),
    /// Measure how the approximation gap decays with the center count.
    Asymptotics(RunArgs),
    /// Emit partition figures only.
    Render(RunArgs),
}

fn resolve_config(args: &RunArgs) -> sdot_core::error::Result<RunConfig> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), None) => RunConfig::from_path(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (Some(_), Some(_)) => {
            return Err(sdot_core::error::Error::Validation(
                "pass either --config or --preset, not both".into(),
            ))
        }
        (None, None) => {
            return Err(sdot_core::error::Error::Validation(
                "pass --config PATH or --preset NAME".into(),
            ))
        }
    };
    if let Some(out) = &args.out {
        config.out = out.clone();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Solve(a) => (CommandKind::Solve, a),
        Command::Refine(a) => (CommandKind::Refine, a),
        Command::Hedonic(a) => (CommandKind::Hedonic, a),
        Command::Exact(a) => (CommandKind::Exact, a),
        Command::Asymptotics(a) => (CommandKind::Asymptotics, a),
        Command::Render(a) => (CommandKind::Render, a),
    };
    let result = resolve_config(args).and_then(|config| execute(kind, &config));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let doc = serde_json::json!({
                "error": err.kind(),
                "message": err.to_string(),
            });
            println!("{}", doc);
            ExitCode::from(2)
        }
    }
}
