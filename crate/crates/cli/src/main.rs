//! `monoflow`: configuration-driven runner for forward solves, Yosida sweeps,
//! optimal control and derivative checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{config_dir, Output};
use crate::config::RunConfig;
use crate::exit::CliError;

const EXIT_CODES: &str = "\
Exit codes:
  0   success
  1   a check ran and failed
  2   configuration or input data error
  3   solver failure
  4   output could not be written
  5   optimizer line search exhausted its halvings
  6   optimizer reached its iteration cap
  64  invalid command line or MONOFLOW_LOG value

Environment:
  MONOFLOW_LOG  log level: error (default), info or debug";

#[derive(Parser, Debug)]
#[command(name = "monoflow", version, about, after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides the config's "out" (default: out).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the state equation and write the trajectory.
    Forward(Common),
    /// Compare Yosida solutions against the reference solver over a list of lambdas.
    YosidaSweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated lambdas; overrides the config.
        #[arg(long, value_name = "LIST", value_delimiter = ',')]
        lambda: Option<Vec<f64>>,
    },
    /// Minimize the reduced objective.
    Optimize(Common),
    /// Compare the adjoint gradient with central differences.
    CheckGradient(Common),
    /// Sample the second-order condition and check quadratic growth.
    CheckSsc(Common),
    /// Optimize along a regularization schedule.
    Continuation(Common),
    /// Generate a seeded instance file.
    MakeInstance(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Forward(c)
            | Command::Optimize(c)
            | Command::CheckGradient(c)
            | Command::CheckSsc(c)
            | Command::Continuation(c)
            | Command::MakeInstance(c) => c,
            Command::YosidaSweep { common, .. } => common,
        }
    }
}

fn init_logging() -> Result<(), CliError> {
    let level = match std::env::var("MONOFLOW_LOG") {
        Ok(v) if ["error", "info", "debug"].contains(&v.as_str()) => v,
        Ok(v) => return Err(CliError::Usage(format!("MONOFLOW_LOG must be error, info or debug (got {v:?})"))),
        Err(_) => "error".to_string(),
    };
    env_logger::Builder::new().parse_filters(&level).format_timestamp(None).init();
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_logging()?;
    let common = cli.command.common();
    let mut config = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let out_dir = common.out.clone().or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let out = Output::new(out_dir);
    if let Command::MakeInstance(c) = &cli.command {
        return commands::make_instance(&config, c.seed, &out);
    }
    let resolved = config.resolve(&config_dir(&common.config))?;
    match &cli.command {
        Command::Forward(_) => commands::forward(&resolved, &out),
        Command::YosidaSweep { lambda, .. } => commands::yosida_sweep(&resolved, lambda.as_deref(), &out),
        Command::Optimize(_) => commands::optimize_cmd(&resolved, &out),
        Command::CheckGradient(_) => commands::check_gradient(&resolved, &out),
        Command::CheckSsc(_) => commands::check_ssc(&resolved, &out),
        Command::Continuation(_) => commands::continuation_cmd(&resolved, &out),
        Command::MakeInstance(_) => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE_ERROR } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("monoflow: {e}");
            e.exit_code()
        }
    }
}
