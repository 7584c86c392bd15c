mod commands;
mod config;
mod io;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use expdesign::kalman::FilterKind;
use expdesign::reward::RewardKind;

#[derive(Parser)]
#[command(name = "expdesign", version, about = "Design material calibration experiments by self-play tree search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy-value network by self-play and report the final design.
    Train(RunArgs),
    /// Greedy design from a trained checkpoint.
    Design(RunArgs),
    /// Calibrate on an action path or on a recorded strain-stress CSV.
    Calibrate {
        #[command(flatten)]
        run: RunArgs,
        /// Action codes, e.g. `1,1,4,1,1`.
        #[arg(long, conflicts_with = "data")]
        path: Option<String>,
        /// CSV with columns step,eps11..eps12,sig11..sig12.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the built-in oracle checks.
    Validate {
        #[arg(long, value_enum, default_value = "fast")]
        level: validate::Level,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Game preset (elastic, vonmises, hill_b05, hill_b20, hill_vm_reduction).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default runs/<preset>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Network checkpoint to design from, or to start training from.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Play the episodes of an iteration in parallel.
    #[arg(long)]
    parallel: bool,
    /// masked or switching.
    #[arg(long)]
    filter: Option<FilterKind>,
    /// kl, nse or mixed.
    #[arg(long)]
    reward: Option<RewardKind>,
}

impl RunArgs {
    fn resolve(&self) -> Result<config::Resolved> {
        let file = match &self.config {
            Some(p) => config::load(p)?,
            None => config::RunConfig::default(),
        };
        let cli = config::Overrides {
            preset: self.preset.clone(),
            seed: self.seed,
            out: self.out.clone(),
            parallel: self.parallel,
            filter: self.filter,
            reward: self.reward,
        };
        config::resolve(&file, &cli)
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(a) => commands::train(&a.resolve()?, a.checkpoint.as_ref()).map(|_| true),
        Command::Design(a) => commands::design(&a.resolve()?, a.checkpoint.as_ref()).map(|_| true),
        Command::Calibrate { run, path, data } => commands::calibrate(&run.resolve()?, path.as_deref(), data.as_ref()).map(|_| true),
        Command::Validate { level } => commands::validate(level),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
