//! Argument parsing and dispatch for the `btcwatch` binary.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 when a command fails at
//! run time.

mod analyze;
mod listen;
mod probe;
mod report;
mod simulate;

use std::ffi::OsString;
use std::io;
use std::path::{Path, PathBuf};

use btcwatch_core::analytics::AnalyticsError;
use btcwatch_core::gossipsim::SimError;
use btcwatch_core::netnode::NodeError;
use btcwatch_core::prober::ProbeError;
use btcwatch_core::records::LogError;
use btcwatch_core::report::ReportError;
use clap::{CommandFactory, Parser, Subcommand};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Environment variable selecting the log level (error, warn, info, debug).
pub const LOG_LEVEL_ENV: &str = "BTCWATCH_LOG_LEVEL";

#[derive(Debug, Parser)]
#[command(name = "btcwatch", version, about = "Bitcoin P2P measurement and gossip timing toolkit")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the listening node and append connection and transaction events to a log.
    Listen(listen::ListenArgs),
    /// Reverse-probe peer addresses and append the results.
    Probe(probe::ProbeArgs),
    /// Compute statistics over event and probe logs.
    Analyze(analyze::AnalyzeArgs),
    /// Run the first-arrival triage experiment on simulated topologies.
    Simulate(simulate::SimulateArgs),
    /// Print a summary of an analysis directory.
    Report(report::ReportArgs),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input file not found: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

impl CliError {
    fn io(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingInput(path.to_path_buf()))
    }
}

/// Directory that holds `file`, treating a bare file name as the current directory.
fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_LEVEL_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp_millis().try_init();
}

/// Parse `args` (including the program name) and run the chosen command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => EXIT_USAGE,
                _ => {
                    let _ = e.print();
                    eprintln!();
                    let _ = Cli::command().write_help(&mut io::stderr());
                    return EXIT_USAGE;
                }
            };
            let _ = e.print();
            return code;
        }
    };
    init_logging();
    let outcome = match cli.command {
        Command::Listen(a) => listen::run(a),
        Command::Probe(a) => probe::run(a),
        Command::Analyze(a) => analyze::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Report(a) => report::run(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|source| CliError::Io {
            path: "tokio runtime".into(),
            source,
        })
}

/// Resolves on Ctrl-C, or SIGTERM where available.
async fn interrupted() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}
