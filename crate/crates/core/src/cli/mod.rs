//! Command-line front end: `train`, `ablation`, `trace-divergence` and
//! `selftest`.
//!
//! Exit codes: 0 success, 1 self-test failure, 2 configuration error,
//! 3 runtime failure.

pub mod commands;
pub mod config;
pub mod selftest;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

pub use config::{AblationConfig, DataConfig, ExperimentConfig, TraceChannel, TraceConfig};

use crate::error::Error;
use crate::par::ExecMode;

pub const EXIT_OK: i32 = 0;
pub const EXIT_SELFTEST: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "qmit", version, about = "Noise-mitigated parameterized quantum circuit experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; falls back to the config's `output` field.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaluate batch samples one at a time.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorruptArg {
    InverseOrder,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train with `repeats` seeds and write metrics, checkpoints and a summary.
    Train(RunArgs),
    /// Run the design × step size × loss grid and the optional layer sweep.
    Ablation(RunArgs),
    /// Write the divergence-to-maximally-mixed trace of a noisy circuit.
    TraceDivergence(RunArgs),
    /// Run the invariant suite.
    Selftest {
        #[arg(long, hide = true)]
        corrupt: Option<CorruptArg>,
    },
}

fn load(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), Error> {
    let config = ExperimentConfig::load(&args.config)?;
    let out = args.out.clone().or_else(|| config.output.clone()).ok_or_else(|| Error::Config {
        field: "output".into(),
        message: "no --out flag and no output in config".into(),
    })?;
    Ok((config, out))
}

fn report(err: &Error, code: i32, stderr: &mut dyn Write) -> i32 {
    let _ = writeln!(stderr, "error: {err}");
    code
}

fn runtime_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn run_command(
    args: &RunArgs,
    stderr: &mut dyn Write,
    f: impl FnOnce(&ExperimentConfig, &Path, ExecMode) -> Result<(), Error>,
) -> i32 {
    let (config, out) = match load(args) {
        Ok(v) => v,
        Err(e) => return report(&e, EXIT_CONFIG, stderr),
    };
    let exec = if args.sequential { ExecMode::Sequential } else { ExecMode::Parallel };
    match f(&config, &out, exec) {
        Ok(()) => EXIT_OK,
        Err(e) => report(&e, runtime_code(&e), stderr),
    }
}

/// Executes a parsed command, printing to the given streams.
pub fn execute(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    match cli.command {
        Command::Train(args) => run_command(&args, stderr, commands::cmd_train),
        Command::Ablation(args) => run_command(&args, stderr, commands::cmd_ablation),
        Command::TraceDivergence(args) => {
            run_command(&args, stderr, |c, out, _| commands::cmd_trace_divergence(c, out))
        }
        Command::Selftest { corrupt } => {
            let corruption = match corrupt {
                Some(CorruptArg::InverseOrder) => selftest::Corruption::InverseOrder,
                None => selftest::Corruption::None,
            };
            let outcomes = selftest::run(corruption);
            let _ = stdout.write_all(selftest::render(&outcomes).as_bytes());
            let failed: Vec<_> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
            if failed.is_empty() {
                EXIT_OK
            } else {
                let _ = writeln!(stderr, "failed invariants: {}", failed.join(", "));
                EXIT_SELFTEST
            }
        }
    }
}

/// Parses `args` (program name first) and executes. Usage errors exit 2.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli, stdout, stderr),
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = stderr.write_all(text.as_bytes());
                EXIT_CONFIG
            } else {
                let _ = stdout.write_all(text.as_bytes());
                EXIT_OK
            }
        }
    }
}
