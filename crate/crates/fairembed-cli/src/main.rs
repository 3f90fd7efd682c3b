//! `fairembed`: scenario CLI for the metric-embedding disparity toolkit.
//!
//! Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fairembed_cli::config::{default_config_toml, parse_config, Scenario, ScenarioConfig};
use fairembed_cli::error::AppError;
use fairembed_cli::scenario::execute;

#[derive(Debug, Parser)]
#[command(
    name = "fairembed",
    version,
    about = "Simulation and analysis toolkit for group disparity in \
             metric-embedding obfuscation",
    subcommand_negates_reqs = true
)]
struct Cli {
    /// TOML config file; defaults apply for every omitted key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread count override (FAIREMBED_THREADS is the fallback;
    /// 0 means the library default).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the default config as TOML and exit.
    #[arg(long)]
    print_default_config: bool,
    #[command(subcommand)]
    scenario: Option<ScenarioCommand>,
}

/// Scenario subcommands; when omitted, the config's `scenario` key picks
/// the experiment.
#[derive(Debug, Clone, Copy, Subcommand)]
enum ScenarioCommand {
    /// Per-image relative projection distances over the gamma sweep.
    #[command(name = "projection_distance")]
    ProjectionDistance,
    /// Closed-form feasibility bound vs the scan oracle.
    #[command(name = "bound_audit")]
    BoundAudit,
    /// Untargeted budget sweep and targeted margin sweep.
    #[command(name = "attack_sweep")]
    AttackSweep,
    /// TPR/FAR/AUC per group, z value, and pairing rule.
    #[command(name = "matching_report")]
    MatchingReport,
    /// Hypothesis tests over the projection-distance distributions.
    #[command(name = "stats_report")]
    StatsReport,
    /// All scenarios in sequence, sharing stages.
    #[command(name = "full_pipeline")]
    FullPipeline,
}

impl From<ScenarioCommand> for Scenario {
    fn from(cmd: ScenarioCommand) -> Self {
        match cmd {
            ScenarioCommand::ProjectionDistance => Scenario::ProjectionDistance,
            ScenarioCommand::BoundAudit => Scenario::BoundAudit,
            ScenarioCommand::AttackSweep => Scenario::AttackSweep,
            ScenarioCommand::MatchingReport => Scenario::MatchingReport,
            ScenarioCommand::StatsReport => Scenario::StatsReport,
            ScenarioCommand::FullPipeline => Scenario::FullPipeline,
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<ScenarioConfig, AppError> {
    let mut config = match &cli.config {
        Some(path) => parse_config(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(cmd) = cli.scenario {
        config.scenario = cmd.into();
    }
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.run.out_dir = out.display().to_string();
    }
    if let Some(threads) = cli.threads {
        config.run.threads = threads;
    } else if let Ok(env_threads) = std::env::var("FAIREMBED_THREADS") {
        config.run.threads = env_threads.parse().map_err(|_| {
            AppError::Config(format!(
                "FAIREMBED_THREADS: expected a thread count, got {env_threads:?}"
            ))
        })?;
    }
    Ok(config)
}

fn run() -> Result<(), AppError> {
    let cli = Cli::parse();
    if cli.print_default_config {
        print!("{}", default_config_toml());
        return Ok(());
    }
    let config = resolve_config(&cli)?;
    let written = execute(&config)?;
    eprintln!(
        "wrote {} files to {} (scenario {})",
        written.len(),
        config.run.out_dir,
        config.scenario.name()
    );
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fairembed: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
