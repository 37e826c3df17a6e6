use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use keratitis_cli::config::{DataSource, RunConfig};
use keratitis_cli::error::{CliError, Result};
use keratitis_cli::pipeline::{
    self, stage_eval, stage_predict, stage_report, stage_split, stage_stats, stage_synth,
    stage_train, Workspace,
};

/// Multitask keratitis classification pipeline.
#[derive(Parser)]
#[command(name = "keratitis", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Work directory for pipeline artifacts (overrides the config).
    #[arg(long)]
    workdir: Option<PathBuf>,
    /// Random seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated evaluation rounds, e.g. `0,3,7` (default: all).
    #[arg(long, value_delimiter = ',')]
    rounds: Option<Vec<usize>>,
    /// Infection model family: ST, Mv1 or Mv2 (overrides the config).
    #[arg(long)]
    variant: Option<String>,
    /// Train the multitask model with the clinical cost-weighted loss.
    #[arg(long)]
    clinical_loss: Option<bool>,
    /// Fit Youden's-J thresholds on validation instead of the fixed 0.5.
    #[arg(long)]
    adaptive_threshold: Option<bool>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset manifest.
    Synth(CommonArgs),
    /// Assign groups to folds with leakage verification.
    Split(CommonArgs),
    /// Train the configured models for each round.
    Train(CommonArgs),
    /// Run inference and write the predictions file.
    Predict(CommonArgs),
    /// Compute thresholds, metrics, confusion matrices and ROC exports.
    Eval(CommonArgs),
    /// Run the demographic subgroup statistics.
    Stats(CommonArgs),
    /// Collate everything into the report document.
    Report(CommonArgs),
    /// Run all stages in order.
    Run(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Synth(a)
            | Command::Split(a)
            | Command::Train(a)
            | Command::Predict(a)
            | Command::Eval(a)
            | Command::Stats(a)
            | Command::Report(a)
            | Command::Run(a) => a,
        }
    }
}

fn load_config(args: &CommonArgs) -> Result<(RunConfig, Workspace)> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(variant) = &args.variant {
        config.model.variant = variant.clone();
    }
    if let Some(clinical) = args.clinical_loss {
        config.loss.clinical = clinical;
    }
    if let Some(adaptive) = args.adaptive_threshold {
        config.threshold.mode = if adaptive { "youden" } else { "fixed" }.to_string();
    }
    if let Some(workdir) = &args.workdir {
        config.workdir = Some(workdir.clone());
    }
    config.infection_variants()?;
    config.adaptive_thresholds()?;
    let workdir = config.workdir.clone().ok_or_else(|| {
        CliError::Validation("no work directory: set `workdir` in the config or pass --workdir".into())
    })?;
    if matches!(config.data, DataSource::Manifest(ref p) if !p.exists()) {
        return Err(CliError::Validation(format!(
            "configured manifest `{}` does not exist",
            match &config.data {
                DataSource::Manifest(p) => p.display().to_string(),
                _ => unreachable!(),
            }
        )));
    }
    Ok((config, Workspace::new(workdir)))
}

fn run(cli: Cli) -> Result<()> {
    let args = cli.command.common();
    let (config, ws) = load_config(args)?;
    let rounds = args.rounds.as_deref();
    match cli.command {
        Command::Synth(_) => stage_synth(&config, &ws),
        Command::Split(_) => stage_split(&config, &ws),
        Command::Train(_) => stage_train(&config, &ws, rounds),
        Command::Predict(_) => stage_predict(&config, &ws, rounds),
        Command::Eval(_) => stage_eval(&config, &ws),
        Command::Stats(_) => stage_stats(&config, &ws),
        Command::Report(_) => stage_report(&config, &ws),
        Command::Run(_) => pipeline::run_all(&config, &ws),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
