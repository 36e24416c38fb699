//! Reverse probing of connecting peers.
//!
//! Each source address is dialled back on the default port. A peer that never
//! accepts TCP is unreachable, one that accepts TCP but never completes the
//! version handshake is unavailable, and one that completes it is available.
//! Probes close immediately after the handshake outcome is known, and any one
//! address is probed at most once per scheduling interval.

use std::collections::HashMap;
use std::fmt;
use std::io;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpStream;
use tokio::sync::Semaphore;

use crate::netnode::{handshake, NodeConfig, Session, DEFAULT_USER_AGENT};
use crate::records::{now_ms, ProbeResult};
use crate::wire::{Network, DEFAULT_MAX_PAYLOAD};

pub const DEFAULT_PROBE_PORT: u16 = 8333;
pub const DEFAULT_MIN_INTERVAL: Duration = Duration::from_secs(6 * 3600);
pub const DEFAULT_TCP_TIMEOUT: Duration = Duration::from_secs(5);
pub const DEFAULT_PROBE_HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_PROBE_CONCURRENCY: usize = 64;

/// Reachability class of an address, ordered from least to most reachable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PeerClass {
    #[serde(rename = "type0")]
    Type0Unreachable,
    #[serde(rename = "type1")]
    Type1Unavailable,
    #[serde(rename = "type2")]
    Type2Available,
}

impl PeerClass {
    pub const ALL: [PeerClass; 3] = [
        PeerClass::Type0Unreachable,
        PeerClass::Type1Unavailable,
        PeerClass::Type2Available,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PeerClass::Type0Unreachable => "type0",
            PeerClass::Type1Unavailable => "type1",
            PeerClass::Type2Available => "type2",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PeerClass::Type0Unreachable => "unreachable",
            PeerClass::Type1Unavailable => "unavailable",
            PeerClass::Type2Available => "available",
        }
    }

    pub fn of_probe(r: &ProbeResult) -> Self {
        if r.handshake_completed {
            PeerClass::Type2Available
        } else if r.tcp_connected {
            PeerClass::Type1Unavailable
        } else {
            PeerClass::Type0Unreachable
        }
    }
}

impl fmt::Display for PeerClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("empty probe history")]
    NoData,
    #[error("probe state {path}: {source}")]
    State {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Best class seen across an address's probe history.
pub fn classify_ip(history: &[ProbeResult]) -> Result<PeerClass, ProbeError> {
    history
        .iter()
        .map(PeerClass::of_probe)
        .max()
        .ok_or(ProbeError::NoData)
}

/// Classify every address that appears in `results`.
pub fn classify_all(results: &[ProbeResult]) -> HashMap<Ipv4Addr, PeerClass> {
    let mut out: HashMap<Ipv4Addr, PeerClass> = HashMap::new();
    for r in results {
        let c = PeerClass::of_probe(r);
        out.entry(r.ip)
            .and_modify(|cur| *cur = (*cur).max(c))
            .or_insert(c);
    }
    out
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub port: u16,
    pub network: Network,
    pub user_agent: String,
    pub tcp_timeout: Duration,
    pub handshake_timeout: Duration,
    pub concurrency: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            port: DEFAULT_PROBE_PORT,
            network: Network::Mainnet,
            user_agent: DEFAULT_USER_AGENT.to_string(),
            tcp_timeout: DEFAULT_TCP_TIMEOUT,
            handshake_timeout: DEFAULT_PROBE_HANDSHAKE_TIMEOUT,
            concurrency: DEFAULT_PROBE_CONCURRENCY,
        }
    }
}

/// Dial `ip` once, attempt the handshake if the port is open, and hang up.
pub async fn probe_ip(ip: Ipv4Addr, config: &ProbeConfig) -> ProbeResult {
    let probe_time = now_ms();
    let mut result = ProbeResult {
        ip,
        probe_time,
        tcp_connected: false,
        handshake_completed: false,
        version_string: None,
    };
    let target = SocketAddrV4::new(ip, config.port);
    let stream = match tokio::time::timeout(config.tcp_timeout, TcpStream::connect(target)).await {
        Ok(Ok(s)) => s,
        _ => return result,
    };
    result.tcp_connected = true;
    let mut session = Session::new(stream, config.network, DEFAULT_MAX_PAYLOAD);
    let node_cfg = NodeConfig {
        network: config.network,
        user_agent: config.user_agent.clone(),
        handshake_timeout: config.handshake_timeout,
        relay_transactions: false,
        ..NodeConfig::default()
    };
    let outcome = handshake(&mut session, &node_cfg).await;
    result.version_string = session.remote_version.as_ref().map(|v| v.user_agent.clone());
    result.handshake_completed = outcome.is_ok();
    session.shutdown().await;
    result
}

/// Probe every address with at most `config.concurrency` probes in flight.
/// Results come back in input order.
pub async fn run_probes(ips: Vec<Ipv4Addr>, config: &ProbeConfig) -> Vec<ProbeResult> {
    let permits = Arc::new(Semaphore::new(config.concurrency.max(1)));
    let cfg = Arc::new(config.clone());
    let handles: Vec<_> = ips
        .into_iter()
        .map(|ip| {
            let permits = Arc::clone(&permits);
            let cfg = Arc::clone(&cfg);
            tokio::spawn(async move {
                let _permit = permits.acquire_owned().await.expect("semaphore open");
                probe_ip(ip, &cfg).await
            })
        })
        .collect();
    let mut out = Vec::with_capacity(handles.len());
    for h in handles {
        out.push(h.await.expect("probe task panicked"));
    }
    out
}

/// A probe the scheduler allowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeTask {
    pub ip: Ipv4Addr,
    pub at_ms: u64,
}

/// Per-address rate limiter: an address is probed on first sight and then
/// not again until `min_interval` has elapsed since its last probe.
///
/// The last-probe table is persisted so restarts keep honouring the limit.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProbeScheduler {
    min_interval_ms: u64,
    last_probe: HashMap<Ipv4Addr, u64>,
}

impl ProbeScheduler {
    pub fn new(min_interval: Duration) -> Self {
        ProbeScheduler {
            min_interval_ms: min_interval.as_millis() as u64,
            last_probe: HashMap::new(),
        }
    }

    pub fn min_interval(&self) -> Duration {
        Duration::from_millis(self.min_interval_ms)
    }

    /// Record a sighting of `ip` at `now_ms`; returns a task if it is due.
    pub fn offer(&mut self, ip: Ipv4Addr, now_ms: u64) -> Option<ProbeTask> {
        match self.last_probe.get(&ip) {
            Some(&last) if now_ms < last.saturating_add(self.min_interval_ms) => None,
            _ => {
                self.last_probe.insert(ip, now_ms);
                Some(ProbeTask { ip, at_ms: now_ms })
            }
        }
    }

    pub fn last_probe(&self, ip: Ipv4Addr) -> Option<u64> {
        self.last_probe.get(&ip).copied()
    }

    pub fn load(path: &Path, min_interval: Duration) -> Result<Self, ProbeError> {
        let err = |source| ProbeError::State {
            path: path.display().to_string(),
            source,
        };
        match std::fs::read_to_string(path) {
            Ok(text) => {
                let mut s: ProbeScheduler = serde_json::from_str(&text)
                    .map_err(|e| err(io::Error::new(io::ErrorKind::InvalidData, e)))?;
                // The configured interval wins over whatever was stored.
                s.min_interval_ms = min_interval.as_millis() as u64;
                Ok(s)
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Self::new(min_interval)),
            Err(e) => Err(err(e)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ProbeError> {
        let text = serde_json::to_string(self).expect("scheduler serializes");
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text)
            .and_then(|_| std::fs::rename(&tmp, path))
            .map_err(|source| ProbeError::State {
                path: path.display().to_string(),
                source,
            })
    }
}

/// Turn a time-ordered stream of `(ip, seen_at_ms)` sightings into a probe plan.
pub fn schedule_probes(
    sightings: impl IntoIterator<Item = (Ipv4Addr, u64)>,
    scheduler: &mut ProbeScheduler,
) -> Vec<ProbeTask> {
    sightings
        .into_iter()
        .filter_map(|(ip, t)| scheduler.offer(ip, t))
        .collect()
}
