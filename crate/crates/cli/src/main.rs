//! `lossforge` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numerical failure, 64 usage error.

mod commands;
mod config;
mod error;
mod plot;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::commands::{
    BudgetArgs, ExtractArgs, FitArgs, PlanSweepArgs, PowerSweepArgs, PredictArgs, SensitivityArgs, SimulateArgs,
};
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "lossforge", version, about = "Resonator loss characterization and coherence prediction")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[command(next_help_heading = "Global options")]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GlobalArgs {
    /// Worker threads for batch work (1 runs everything sequentially).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Also write SVG plots next to the reports.
    #[arg(long, global = true)]
    pub plot: bool,
    /// Output directory (default: lossforge-out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON config file; command-line flags override its keys.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the hanger model to one or more S21 traces.
    Fit(FitArgs),
    /// Fit every trace of a power sweep and the TLS model per mode.
    PowerSweep(PowerSweepArgs),
    /// Extract loss factors from per-mode internal Q's.
    Extract(ExtractArgs),
    /// Map how well a design resolves two loss factors.
    Sensitivity(SensitivityArgs),
    /// Predict Q and T1 from a loss-factor library.
    Predict(PredictArgs),
    /// Plan a VNA frequency sweep.
    PlanSweep(PlanSweepArgs),
    /// Generate synthetic traces from a ground-truth file.
    Simulate(SimulateArgs),
    /// Per-mode loss budget from extracted factors or a library.
    Budget(BudgetArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::PowerSweep(_) => "power-sweep",
            Command::Extract(_) => "extract",
            Command::Sensitivity(_) => "sensitivity",
            Command::Predict(_) => "predict",
            Command::PlanSweep(_) => "plan-sweep",
            Command::Simulate(_) => "simulate",
            Command::Budget(_) => "budget",
        }
    }
}

fn go<A: Serialize + DeserializeOwned>(
    run: &mut run::Run,
    cli: A,
    section: Option<&serde_json::Value>,
    command: fn(&mut run::Run, A) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let args = config::merge(&cli, section)?;
    run.settings(&args);
    command(run, args)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.global.config {
        Some(p) => Some(config::load(p)?),
        None => None,
    };
    let name = cli.command.name();
    let global: GlobalArgs = config::merge(&cli.global, file.as_ref().map(config::globals).as_ref())?;
    let section = file.as_ref().and_then(|f| config::section(f, name));
    let mut run = run::Run::start(name, &global)?;
    match cli.command {
        Command::Fit(a) => go(&mut run, a, section, commands::fit),
        Command::PowerSweep(a) => go(&mut run, a, section, commands::power_sweep),
        Command::Extract(a) => go(&mut run, a, section, commands::extract),
        Command::Sensitivity(a) => go(&mut run, a, section, commands::sensitivity),
        Command::Predict(a) => go(&mut run, a, section, commands::predict),
        Command::PlanSweep(a) => go(&mut run, a, section, commands::plan_sweep),
        Command::Simulate(a) => go(&mut run, a, section, commands::simulate),
        Command::Budget(a) => go(&mut run, a, section, commands::budget),
    }?;
    run.finish()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { error::EXIT_USAGE } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
