//! Discrete-event simulation of transaction diffusion with trickle delays,
//! and the first-arrival triage experiment built on it.
//!
//! A client C connects to a monitor A that talks to nobody else, while a
//! listener L holds connections to every server. A transaction is
//! attributed to C when A sees it strictly before L does.

mod config;
mod engine;
mod experiment;
mod regions;
mod topology;

use std::io;

use thiserror::Error;

pub use config::{LatencyModel, MonitorLink, SimConfig};
pub use engine::{
    relay_delay, simulate_tx, simulate_tx_logged, triage, GroundTruth, SimEvent, SimEventKind, Trace,
    TriageOutcome, TxRng, Verdict, TIE_RESOLUTION,
};
pub use experiment::{
    ks_critical_001, ks_statistic, pooled, quantile, run_experiment, run_seeds, write_results_csv,
    ExperimentResult, LatencyHistogram, RESULTS_HEADER,
};
pub use regions::RegionMatrix;
pub use topology::{build_topology, Link, LinkDirection, Network, NodeId, Observers, Role};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Invalid(String),
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("{path}:{line}: {reason}")]
    Regions {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("topology: {0}")]
    Topology(String),
    #[error("results output: {0}")]
    Csv(#[from] csv::Error),
}
