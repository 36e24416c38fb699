//! Offline statistics over event and probe logs.

mod asn;
mod output;
mod peertype;
mod stats;

use std::collections::HashMap;
use std::io;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::prober::PeerClass;

pub use asn::{AsnDatabase, AsnInfo};
pub use output::{analyze, render_overview, AnalysisInputs, PopulationParams, StatReport, Table};
pub use peertype::{classify_peer_type, PeerType, TorList};
pub use stats::*;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Format {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("no {0} to analyse")]
    Empty(&'static str),
    #[error("{0}")]
    Domain(String),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl AnalyticsError {
    pub(crate) fn io(path: &str, source: io::Error) -> Self {
        AnalyticsError::Io {
            path: path.to_string(),
            source,
        }
    }
}

/// Reachability class per address, as produced by the prober.
pub type ClassMap = HashMap<Ipv4Addr, PeerClass>;

/// A reachability class, or `None` for addresses that were never probed.
pub type Bucket = Option<PeerClass>;

/// Buckets in display order.
pub const BUCKETS: [Bucket; 4] = [
    Some(PeerClass::Type0Unreachable),
    Some(PeerClass::Type1Unavailable),
    Some(PeerClass::Type2Available),
    None,
];

pub fn bucket_of(classes: &ClassMap, ip: Ipv4Addr) -> Bucket {
    classes.get(&ip).copied()
}

pub fn bucket_label(b: Bucket) -> &'static str {
    b.map(PeerClass::label).unwrap_or("unclassified")
}
