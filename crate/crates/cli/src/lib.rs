//! `wmark`: watermark design, sampling-period sweeps and replay-attack
//! simulation from a TOML scenario file.
//!
//! Exit status is 0 on success, 1 for invalid input and 2 for numerical
//! failure. The last line on stderr is always a `key=value` record:
//!
//! ```text
//! wmark status=ok command=design files=2 summary="..."
//! wmark status=error command=design kind=validation exit=1 message="..."
//! ```

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{Report, RunOptions};
pub use config::ScenarioConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "wmark", version, about = "Physical watermark design against replay attacks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Optimal watermark at one sampling period.
    Design(CommonArgs),
    /// Expected detector shift over a grid of sampling periods.
    Sweep(CommonArgs),
    /// One trajectory with the χ² detector, plus Monte Carlo means.
    Simulate(CommonArgs),
    /// ROC curves with and without the watermark at each grid period.
    Roc(CommonArgs),
    /// LQG cost ratios over the grid.
    Table(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Design(_) => "design",
            Command::Sweep(_) => "sweep",
            Command::Simulate(_) => "simulate",
            Command::Roc(_) => "roc",
            Command::Table(_) => "table",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Design(a) | Command::Sweep(a) | Command::Simulate(a) | Command::Roc(a) | Command::Table(a) => a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Args)]
pub struct CommonArgs {
    /// Scenario file (TOML).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Golden-section refinement of the optimal period (sweep).
    #[arg(long)]
    pub refine: bool,
    /// Overrides `simulation.trials`.
    #[arg(long)]
    pub trials: Option<usize>,
}

/// Runs one subcommand against an already parsed configuration.
pub fn execute(command: &Command, cfg: &ScenarioConfig) -> Result<Report, CliError> {
    cfg.validate()?;
    let args = command.args();
    let opts = RunOptions {
        out_dir: args
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out")),
        seed: args.seed.unwrap_or(cfg.seed),
        refine: args.refine,
        trials: args.trials,
    };
    match command {
        Command::Design(_) => commands::design(cfg, &opts),
        Command::Sweep(_) => commands::sweep(cfg, &opts),
        Command::Simulate(_) => commands::simulate_cmd(cfg, &opts),
        Command::Roc(_) => commands::roc(cfg, &opts),
        Command::Table(_) => commands::table(cfg, &opts),
    }
}

fn quoted(s: &str) -> String {
    serde_json::to_string(s).unwrap_or_else(|_| "\"\"".into())
}

/// Entry point shared by the binary and tests; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            if code != 0 {
                eprintln!(
                    "wmark status=error command=none kind=usage exit=1 message={}",
                    quoted(&e.kind().to_string())
                );
            }
            return code;
        }
    };
    let name = cli.command.name();
    let outcome = ScenarioConfig::load(&cli.command.args().config).and_then(|cfg| execute(&cli.command, &cfg));
    match outcome {
        Ok(report) => {
            for f in &report.files {
                println!("{}", f.display());
            }
            eprintln!(
                "wmark status=ok command={name} files={} summary={}",
                report.files.len(),
                quoted(&report.summary)
            );
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!(
                "wmark status=error command={name} kind={} exit={} message={}",
                e.kind(),
                e.exit_code(),
                quoted(&e.to_string())
            );
            e.exit_code()
        }
    }
}
